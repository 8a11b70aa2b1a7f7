#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "totkit/config.hpp"
#include "totkit/features.hpp"
#include "totkit/rng.hpp"

namespace totkit::dataset {

using features::ActivityClass;
using features::FeatureFrame;
using features::kNumActivities;

// Episode geometry: 20 s before the take-over request, 10 s after.
inline constexpr double kPreRollSeconds = 20.0;
inline constexpr double kPostRollSeconds = 10.0;
inline constexpr double kEpisodeSeconds = kPreRollSeconds + kPostRollSeconds;

// Target times live in (0, 10] s after the TOR; draws are additionally kept
// away from 0 so that shifted/augmented targets stay learnable.
inline constexpr double kTargetMin = 0.15;
inline constexpr double kTargetMax = 10.0;

// Minimum headroom (s) that must remain below the smallest target when the
// TOR is shifted forward during augmentation.
inline constexpr double kAugmentGuard = 0.1;

inline std::size_t frames_per_episode(double rate_hz) {
    return static_cast<std::size_t>(std::lround(kEpisodeSeconds * rate_hz));
}
inline std::size_t tor_frame_index(double rate_hz) {
    return static_cast<std::size_t>(std::lround(kPreRollSeconds * rate_hz));
}

struct Targets {
    double t_e = 0.0;  // eyes-on-road, s after TOR
    double t_f = 0.0;  // foot-on-pedal
    double t_h = 0.0;  // hands-on-wheel

    double tot() const { return std::max(t_e, std::max(t_f, t_h)); }
    bool operator==(const Targets&) const = default;
};

enum class Provenance { kReal, kSynthetic, kAugmented };

const char* provenance_name(Provenance p);
Provenance provenance_from_string(const std::string& s);

// One 30-second take-over event.
struct Episode {
    std::string id;
    double rate_hz = 15.0;
    std::vector<FeatureFrame> frames;  // frames_per_episode(rate_hz) entries
    std::size_t tor_index = 0;         // == tor_frame_index(rate_hz)
    std::optional<Targets> targets;
    std::optional<ActivityClass> activity;
    Provenance provenance = Provenance::kReal;
    std::string source_id;  // augmented episodes: id of the episode they came from
};

// Structural invariants (frame count, TOR position, timestamps, targets);
// returns violations, empty means valid.
std::vector<std::string> validate_episode(const Episode& ep);

// --- Synthetic generator ----------------------------------------------------

struct MarkerDistribution {
    double mean = 1.0;  // s
    double sd = 0.3;    // s
};

struct ActivityTimingParams {
    MarkerDistribution eyes;
    MarkerDistribution foot;
    MarkerDistribution hands;
};

// Calibration constants for the synthetic episode generator. The timing
// means/SDs are stated defaults, not measured ground truth; they are chosen
// to reproduce the qualitative orderings of real take-over behavior (hands
// slowest, distracting handheld activities slowest overall).
struct GeneratorParams {
    std::array<ActivityTimingParams, kNumActivities> timing;
    double hover_dwell_fraction = 0.25;  // fraction of a transition spent hovering
    double gaze_switch_sharpness = 1.0;  // >1 sharpens the gaze hand-off ramp
    double feature_noise = 0.004;        // additive per-component noise amplitude
    double rate_hz = 15.0;

    static GeneratorParams defaults();
    // defaults() overridden by `gen.*` keys, e.g. `gen.texting.hands.mean = 3.6`.
    static GeneratorParams from_config(const Config& cfg);
    void to_config(Config& cfg) const;

    // Throws ConfigError if means/SDs are not positive or the mean orderings
    // (hands slowest per activity; handheld-distraction group slowest overall)
    // do not hold.
    void validate() const;
};

// Draw (t_e, t_f, t_h) for one episode: independent truncated normals on
// [kTargetMin, kTargetMax], rejection sampled, drawn in e/f/h order.
Targets draw_targets(ActivityClass activity, const GeneratorParams& params, Rng& rng);

// Synthesize a full labeled episode: pre-TOR frames hold the activity's
// feature signature; post-TOR trajectories complete each transition at its
// drawn target (gaze front >= 0.9 at t_e, hands on wheel with stereo
// distance < 0.05 m at t_h, foot on brake at t_f).
Episode generate_episode(ActivityClass activity, const GeneratorParams& params, Rng& rng,
                         const std::string& id = "");

// --- Segmentation and labeling ----------------------------------------------

struct SegmentationResult {
    std::vector<Episode> episodes;             // unlabeled targets
    std::vector<std::string> skipped;          // one message per skipped TOR
};

// Cuts one 30 s episode per TOR time out of a continuous stream sampled at
// rate_hz. TORs without 20 s of pre-roll or 10 s of post-roll are skipped and
// reported. Throws DataError on non-monotone timestamps.
SegmentationResult segment_session(const std::vector<FeatureFrame>& stream, const std::vector<double>& tor_times,
                                   double rate_hz, const std::string& id_prefix = "seg");

// Attaches target times; each must lie in (0, kTargetMax]. Throws DataError.
Episode annotate_targets(const Episode& ep, double t_e, double t_f, double t_h);

// --- Augmentation -------------------------------------------------------------

bool augmentable(const Episode& ep, double guard = kAugmentGuard);

// Moves the TOR `delta` seconds later: frame content slides forward by
// round(delta * r) (the tail repeats the final frame, timestamps extended at
// the frame rate), targets shrink by delta, provenance becomes augmented.
// delta must be in [0, min target - guard].
Episode shift_episode(const Episode& ep, double delta, const std::string& new_id);

// k augmented copies with delta drawn uniform in (0, min target - guard).
// Returns empty (and reports through `warnings`) when the episode is not
// augmentable.
std::vector<Episode> augment_tor(const Episode& ep, Rng& rng, std::size_t k, double guard = kAugmentGuard,
                                 std::vector<std::string>* warnings = nullptr);

// --- Dataset container, splitting, persistence -------------------------------

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split split_from_string(const std::string& s);

struct StereoNormalization {
    double scale = 1.0;
    double offset = 0.0;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    double rate_hz = 15.0;
    std::map<std::string, std::size_t> counts;  // activity name -> episode count
    std::map<std::string, Split> splits;        // episode id -> split
    StereoNormalization stereo_norm;
    std::optional<GeneratorParams> generator;
};

struct Dataset {
    std::vector<Episode> episodes;
    DatasetManifest manifest;

    const Episode* find(const std::string& id) const;
};

// Per-activity episode counts of the real study this generator mirrors.
extern const std::array<std::size_t, kNumActivities> kCdsActivityCounts;  // totals 1375

// Synthesizes one labeled episode set with the given per-activity counts.
// Episode i derives its RNG from (seed, i), so generation is reproducible
// and parallelizable.
Dataset generate_dataset(const std::array<std::size_t, kNumActivities>& counts, const GeneratorParams& params,
                         std::uint64_t seed);

// The 1,375-episode mirror with the real study's per-activity counts.
Dataset generate_cds_mirror(const GeneratorParams& params, std::uint64_t seed);

// Stratified train/val/test assignment. Ratios must sum to 1. Augmented
// episodes always inherit their source episode's split. Deterministic in
// (episodes, ratios, seed).
DatasetManifest split_dataset(const std::vector<Episode>& episodes, const std::array<double, 3>& ratios,
                              std::uint64_t seed);

// Augments every labeled episode in place (k copies each, TOR-shift), wiring
// augmented episodes into the manifest split of their source when splits
// exist. Returns the number of episodes added.
std::size_t augment_dataset(Dataset& ds, std::size_t k, double guard, std::uint64_t seed,
                            std::vector<std::string>* warnings = nullptr);

std::vector<const Episode*> episodes_in_split(const Dataset& ds, Split split);

// Directory layout: <dir>/manifest.json + <dir>/episodes.jsonl.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

std::string episode_to_json(const Episode& ep);
Episode episode_from_json(const std::string& line);

// --- Analytic timing oracle ---------------------------------------------------
// Closed-form (quadrature over erf-based CDFs) moments of the generated
// take-over time; used to validate parameter orderings and as the intrinsic
// noise floor of the benchmark: the expected |TOT - per-activity mean| of a
// predictor that always answers the activity's mean TOT.

double truncnorm_cdf(double x, double mean, double sd, double lo = kTargetMin, double hi = kTargetMax);
double analytic_tot_cdf(const ActivityTimingParams& timing, double x);
double analytic_tot_mean(const ActivityTimingParams& timing);
double analytic_tot_abs_deviation(const ActivityTimingParams& timing, double about);
double analytic_marker_mean(const MarkerDistribution& marker);

}  // namespace totkit::dataset
