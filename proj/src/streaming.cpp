#include "totkit/streaming.hpp"

#include <cmath>

#include <json.hpp>

#include "totkit/errors.hpp"

namespace totkit::streaming {

using features::format_double;
using nlohmann::json;

const char* prediction_status_name(PredictionStatus s) {
    switch (s) {
        case PredictionStatus::kWarming: return "warming";
        case PredictionStatus::kOk: return "ok";
        case PredictionStatus::kStale: return "stale";
    }
    throw DataError("unknown prediction status");
}

const char* gate_action_name(GateAction a) {
    switch (a) {
        case GateAction::kHandover: return "handover";
        case GateAction::kSafeStop: return "safe-stop";
    }
    throw DataError("unknown gate action");
}

GateDecision safety_gate(double tot, double ttc, double epsilon) {
    for (const auto& [v, name] : {std::pair{tot, "tot"}, {ttc, "ttc"}, {epsilon, "epsilon"}}) {
        if (!std::isfinite(v)) throw ValidationError(std::string("gate input ") + name + " is not finite");
        if (v < 0.0)
            throw ValidationError(std::string("gate input ") + name + " = " + format_double(v) + " is negative");
    }
    GateDecision d;
    d.tot = tot;
    d.ttc = ttc;
    d.epsilon = epsilon;
    d.action = (tot + epsilon < ttc) ? GateAction::kHandover : GateAction::kSafeStop;
    return d;
}

StreamRuntime::StreamRuntime(model::ModelConfig config, model::ModelParams params, double staleness_bound_s)
    : config_(std::move(config)), params_(std::move(params)), staleness_bound_(staleness_bound_s) {
    config_.validate();
    if (staleness_bound_ <= 0.0) throw ConfigError("staleness bound must be positive");
}

void StreamRuntime::reset() {
    buffer_.clear();
    last_timestamp_.reset();
    last_prediction_.reset();
}

Prediction StreamRuntime::push_frame(const FeatureFrame& frame, double timestamp) {
    if (last_timestamp_ && timestamp < *last_timestamp_)
        throw DataError("out-of-order frame: t=" + format_double(timestamp) + " after t=" +
                        format_double(*last_timestamp_));
    const FeatureFrame clean = features::ingest_frame(frame);
    model::Vec flat = features::flatten(clean, config_.mask);

    bool stale = false;
    if (last_timestamp_ && !buffer_.empty()) {
        const double gap = timestamp - *last_timestamp_;
        if (gap > staleness_bound_) {
            // Producer stalled: hold the last observation at the stream rate
            // so the window stays contiguous, and flag the prediction.
            stale = true;
            const auto missing = static_cast<std::size_t>(std::lround(gap * config_.rate_hz)) - 1;
            const std::size_t cap = config_.window_frames();
            const model::Vec held = buffer_.back();
            for (std::size_t i = 0; i < missing; ++i) {
                buffer_.push_back(held);
                if (buffer_.size() > cap) buffer_.pop_front();
            }
        }
    }

    buffer_.push_back(std::move(flat));
    const std::size_t cap = config_.window_frames();
    while (buffer_.size() > cap) buffer_.pop_front();
    last_timestamp_ = timestamp;

    Prediction pred;
    pred.timestamp = timestamp;
    if (buffer_.size() < cap) {
        pred.status = PredictionStatus::kWarming;
    } else {
        model::Window window(buffer_.begin(), buffer_.end());
        pred.outputs = model::forward_window(config_, params_, window);
        pred.status = stale ? PredictionStatus::kStale : PredictionStatus::kOk;
    }
    last_prediction_ = pred;
    return pred;
}

ReplayTrace replay_stream(StreamRuntime& runtime, const Episode& episode) {
    const auto violations = dataset::validate_episode(episode);
    if (!violations.empty()) {
        std::string msg = "cannot replay episode " + episode.id + ":";
        for (const auto& v : violations) msg += " " + v + ";";
        throw DataError(msg);
    }
    runtime.reset();
    ReplayTrace trace;
    trace.records.reserve(episode.frames.size());
    for (std::size_t i = 0; i < episode.frames.size(); ++i) {
        TraceRecord rec;
        rec.frame_index = i;
        rec.prediction = runtime.push_frame(episode.frames[i], episode.frames[i].timestamp);
        if (episode.targets && i >= episode.tor_index) {
            const double elapsed = (static_cast<double>(i) - static_cast<double>(episode.tor_index)) /
                                   episode.rate_hz;
            if (elapsed <= episode.targets->tot()) {
                const model::Targets3 shifted{std::max(episode.targets->t_e - elapsed, 0.0),
                                              std::max(episode.targets->t_f - elapsed, 0.0),
                                              std::max(episode.targets->t_h - elapsed, 0.0)};
                rec.shifted_targets = shifted;
                if (rec.prediction.outputs) {
                    const Outputs& o = *rec.prediction.outputs;
                    rec.abs_error = Outputs{std::abs(o.o_e - shifted.t_e), std::abs(o.o_f - shifted.t_f),
                                            std::abs(o.o_h - shifted.t_h)};
                    const double shifted_tot = std::max(shifted.t_e, std::max(shifted.t_f, shifted.t_h));
                    rec.tot_abs_error = std::abs(o.tot() - shifted_tot);
                }
            }
        }
        trace.records.push_back(std::move(rec));
    }
    return trace;
}

std::string trace_record_to_json(const TraceRecord& rec) {
    json j;
    j["frame"] = rec.frame_index;
    j["t"] = rec.prediction.timestamp;
    j["status"] = prediction_status_name(rec.prediction.status);
    if (rec.prediction.outputs) {
        const Outputs& o = *rec.prediction.outputs;
        j["o_e"] = o.o_e;
        j["o_f"] = o.o_f;
        j["o_h"] = o.o_h;
        j["tot"] = o.tot();
    }
    if (rec.shifted_targets) {
        j["target_e"] = rec.shifted_targets->t_e;
        j["target_f"] = rec.shifted_targets->t_f;
        j["target_h"] = rec.shifted_targets->t_h;
    }
    if (rec.tot_abs_error) j["tot_abs_error"] = *rec.tot_abs_error;
    return j.dump();
}

}  // namespace totkit::streaming
