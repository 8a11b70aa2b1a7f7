#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "totkit/dataset.hpp"
#include "totkit/features.hpp"
#include "totkit/model.hpp"

namespace totkit::streaming {

using dataset::Episode;
using features::FeatureFrame;
using model::Outputs;

enum class PredictionStatus { kWarming, kOk, kStale };

const char* prediction_status_name(PredictionStatus s);

struct Prediction {
    double timestamp = 0.0;
    PredictionStatus status = PredictionStatus::kWarming;
    std::optional<Outputs> outputs;  // absent while warming

    // max(o_e, o_f, o_h); only meaningful once outputs exist.
    std::optional<double> tot() const {
        if (!outputs) return std::nullopt;
        return outputs->tot();
    }
};

enum class GateAction { kHandover, kSafeStop };

const char* gate_action_name(GateAction a);

struct GateDecision {
    GateAction action = GateAction::kSafeStop;
    double tot = 0.0;
    double ttc = 0.0;
    double epsilon = 0.0;
};

// Hand control to the driver only when tot + epsilon < ttc (strictly);
// otherwise come to a safe stop. All inputs must be finite and non-negative.
GateDecision safety_gate(double tot, double ttc, double epsilon);

// Single-consumer real-time runtime: push one frame per call, get one
// prediction per call. Construction and ownership transfer between threads
// are safe; concurrent push_frame calls are not supported.
class StreamRuntime {
public:
    StreamRuntime(model::ModelConfig config, model::ModelParams params, double staleness_bound_s = 0.5);

    // Validates and flattens the frame, fills any gap larger than the
    // staleness bound by repeating the previous frame at the stream rate
    // (degrading status to stale for this prediction), and emits a
    // prediction once window_frames() frames have arrived.
    // Throws DataError on out-of-order timestamps, ValidationError on
    // invalid frames.
    Prediction push_frame(const FeatureFrame& frame, double timestamp);

    void reset();

    const model::ModelConfig& config() const { return config_; }
    double staleness_bound() const { return staleness_bound_; }
    std::size_t buffered_frames() const { return buffer_.size(); }
    const std::optional<Prediction>& last_prediction() const { return last_prediction_; }

private:
    model::ModelConfig config_;
    model::ModelParams params_;
    double staleness_bound_;
    std::deque<model::Vec> buffer_;  // most recent window_frames() flattened frames
    std::optional<double> last_timestamp_;
    std::optional<Prediction> last_prediction_;
};

// One replayed frame: the prediction plus, on labeled episodes, absolute
// errors against the time-shifted targets for frames between the TOR and the
// completed take-over (each target decreases linearly with the time elapsed
// since the TOR, clamped at 0).
struct TraceRecord {
    std::size_t frame_index = 0;
    Prediction prediction;
    std::optional<model::Targets3> shifted_targets;
    std::optional<Outputs> abs_error;   // per-component |o - shifted t|
    std::optional<double> tot_abs_error;
};

struct ReplayTrace {
    std::vector<TraceRecord> records;
};

// Feeds every frame of an episode through the runtime (after a reset) and
// collects the prediction trace. Scoring fields are filled for labeled
// episodes on frames from the TOR until the take-over completes.
ReplayTrace replay_stream(StreamRuntime& runtime, const Episode& episode);

std::string trace_record_to_json(const TraceRecord& rec);

}  // namespace totkit::streaming
