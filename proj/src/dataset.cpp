#include "totkit/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "totkit/errors.hpp"

namespace totkit::dataset {

using features::format_double;
using nlohmann::json;

const std::array<std::size_t, kNumActivities> kCdsActivityCounts = {308, 182, 85, 262, 42, 299, 97, 100};

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::kReal: return "real";
        case Provenance::kSynthetic: return "synthetic";
        case Provenance::kAugmented: return "augmented";
    }
    throw DataError("unknown provenance value");
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "real") return Provenance::kReal;
    if (s == "synthetic") return Provenance::kSynthetic;
    if (s == "augmented") return Provenance::kAugmented;
    throw DataError("unknown provenance: " + s);
}

const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    throw DataError("unknown split value");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::kTrain;
    if (s == "val") return Split::kVal;
    if (s == "test") return Split::kTest;
    throw DataError("unknown split: " + s);
}

std::vector<std::string> validate_episode(const Episode& ep) {
    std::vector<std::string> v;
    const std::size_t want_frames = frames_per_episode(ep.rate_hz);
    const std::size_t want_tor = tor_frame_index(ep.rate_hz);
    if (ep.rate_hz <= 0.0) v.push_back("rate must be positive");
    if (ep.frames.size() != want_frames)
        v.push_back("frame count " + std::to_string(ep.frames.size()) + " != " + std::to_string(want_frames));
    if (ep.tor_index != want_tor)
        v.push_back("tor_index " + std::to_string(ep.tor_index) + " != " + std::to_string(want_tor));
    for (std::size_t i = 1; i < ep.frames.size(); ++i)
        if (!(ep.frames[i].timestamp > ep.frames[i - 1].timestamp)) {
            v.push_back("timestamps not strictly increasing at frame " + std::to_string(i));
            break;
        }
    if (ep.targets) {
        for (const auto& [t, name] : {std::pair{ep.targets->t_e, "t_e"}, {ep.targets->t_f, "t_f"},
                                     {ep.targets->t_h, "t_h"}})
            if (!(t > 0.0) || t > kTargetMax)
                v.push_back(std::string(name) + " = " + format_double(t) + " outside (0, 10]");
    }
    return v;
}

// --- Generator parameters -----------------------------------------------------

GeneratorParams GeneratorParams::defaults() {
    GeneratorParams p;
    const auto set = [&p](ActivityClass a, MarkerDistribution e, MarkerDistribution f, MarkerDistribution h) {
        p.timing[static_cast<std::size_t>(a)] = {e, f, h};
    };
    // Calibration constants. Hands are slowest everywhere; handheld
    // distractions (texting, phone call, counting change, reading) are
    // slowest overall; pretend-sleep stays quick.
    set(ActivityClass::kAttentive, {0.60, 0.25}, {1.00, 0.35}, {1.90, 0.80});
    set(ActivityClass::kTalkingToCopassenger, {0.70, 0.25}, {1.10, 0.35}, {2.10, 0.80});
    set(ActivityClass::kLapEyesClosed, {0.90, 0.30}, {1.20, 0.40}, {2.30, 0.85});
    set(ActivityClass::kTexting, {1.20, 0.40}, {1.70, 0.50}, {3.60, 1.00});
    set(ActivityClass::kPhoneCall, {1.10, 0.35}, {1.60, 0.50}, {3.40, 1.00});
    set(ActivityClass::kInfotainment, {0.80, 0.30}, {1.20, 0.40}, {2.20, 0.80});
    set(ActivityClass::kCountingChange, {1.30, 0.40}, {1.80, 0.50}, {3.70, 1.00});
    set(ActivityClass::kReading, {1.40, 0.45}, {1.90, 0.55}, {4.30, 1.10});
    return p;
}

namespace {

std::string timing_key(ActivityClass a, const char* marker, const char* field) {
    return std::string("gen.") + features::activity_name(a) + "." + marker + "." + field;
}

}  // namespace

GeneratorParams GeneratorParams::from_config(const Config& cfg) {
    GeneratorParams p = defaults();
    for (std::size_t i = 0; i < kNumActivities; ++i) {
        const auto a = static_cast<ActivityClass>(i);
        auto& t = p.timing[i];
        t.eyes.mean = cfg.get_double(timing_key(a, "eyes", "mean"), t.eyes.mean);
        t.eyes.sd = cfg.get_double(timing_key(a, "eyes", "sd"), t.eyes.sd);
        t.foot.mean = cfg.get_double(timing_key(a, "foot", "mean"), t.foot.mean);
        t.foot.sd = cfg.get_double(timing_key(a, "foot", "sd"), t.foot.sd);
        t.hands.mean = cfg.get_double(timing_key(a, "hands", "mean"), t.hands.mean);
        t.hands.sd = cfg.get_double(timing_key(a, "hands", "sd"), t.hands.sd);
    }
    p.hover_dwell_fraction = cfg.get_double("gen.hover_dwell_fraction", p.hover_dwell_fraction);
    p.gaze_switch_sharpness = cfg.get_double("gen.gaze_switch_sharpness", p.gaze_switch_sharpness);
    p.feature_noise = cfg.get_double("gen.feature_noise", p.feature_noise);
    p.rate_hz = cfg.get_double("rate_hz", p.rate_hz);
    p.validate();
    return p;
}

void GeneratorParams::to_config(Config& cfg) const {
    for (std::size_t i = 0; i < kNumActivities; ++i) {
        const auto a = static_cast<ActivityClass>(i);
        const auto& t = timing[i];
        cfg.set(timing_key(a, "eyes", "mean"), format_double(t.eyes.mean));
        cfg.set(timing_key(a, "eyes", "sd"), format_double(t.eyes.sd));
        cfg.set(timing_key(a, "foot", "mean"), format_double(t.foot.mean));
        cfg.set(timing_key(a, "foot", "sd"), format_double(t.foot.sd));
        cfg.set(timing_key(a, "hands", "mean"), format_double(t.hands.mean));
        cfg.set(timing_key(a, "hands", "sd"), format_double(t.hands.sd));
    }
    cfg.set("gen.hover_dwell_fraction", format_double(hover_dwell_fraction));
    cfg.set("gen.gaze_switch_sharpness", format_double(gaze_switch_sharpness));
    cfg.set("gen.feature_noise", format_double(feature_noise));
    cfg.set("rate_hz", format_double(rate_hz));
}

void GeneratorParams::validate() const {
    for (std::size_t i = 0; i < kNumActivities; ++i) {
        const auto& t = timing[i];
        const char* name = features::activity_name(static_cast<ActivityClass>(i));
        for (const auto& [m, label] : {std::pair{t.eyes, "eyes"}, {t.foot, "foot"}, {t.hands, "hands"}}) {
            if (!(m.mean > 0.0)) throw ConfigError(std::string(name) + "." + label + ": mean must be positive");
            if (!(m.sd > 0.0)) throw ConfigError(std::string(name) + "." + label + ": sd must be positive");
        }
        if (!(t.hands.mean > t.eyes.mean) || !(t.hands.mean > t.foot.mean))
            throw ConfigError(std::string(name) + ": hands-on-wheel must be the slowest marker on average");
    }
    const auto tot = [this](ActivityClass a) { return analytic_tot_mean(timing[static_cast<std::size_t>(a)]); };
    const double slow_group = std::min(std::min(tot(ActivityClass::kTexting), tot(ActivityClass::kPhoneCall)),
                                       std::min(tot(ActivityClass::kCountingChange), tot(ActivityClass::kReading)));
    const double fast_group = std::max(std::max(tot(ActivityClass::kAttentive),
                                                tot(ActivityClass::kTalkingToCopassenger)),
                                       tot(ActivityClass::kInfotainment));
    if (!(slow_group > fast_group))
        throw ConfigError("handheld-distraction activities must have longer mean take-over times");
    if (!(tot(ActivityClass::kLapEyesClosed) < tot(ActivityClass::kTexting)))
        throw ConfigError("lap/eyes-closed mean take-over time must stay below texting");
    if (!(hover_dwell_fraction > 0.0) || hover_dwell_fraction >= 0.6)
        throw ConfigError("hover_dwell_fraction must lie in (0, 0.6)");
    if (!(gaze_switch_sharpness > 0.0)) throw ConfigError("gaze_switch_sharpness must be positive");
    if (feature_noise < 0.0 || feature_noise > 0.01)
        throw ConfigError("feature_noise must lie in [0, 0.01]");
    if (!(rate_hz > 0.0)) throw ConfigError("rate_hz must be positive");
}

// --- Analytic timing oracle -----------------------------------------------------

namespace {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Composite Simpson on [lo, hi].
template <typename F>
double integrate(F&& f, double lo, double hi, int intervals = 4096) {
    if (hi <= lo) return 0.0;
    const double h = (hi - lo) / intervals;
    double acc = f(lo) + f(hi);
    for (int k = 1; k < intervals; ++k) acc += f(lo + k * h) * (k % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace

double truncnorm_cdf(double x, double mean, double sd, double lo, double hi) {
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    const double a = std_normal_cdf((lo - mean) / sd);
    const double b = std_normal_cdf((hi - mean) / sd);
    return (std_normal_cdf((x - mean) / sd) - a) / (b - a);
}

double analytic_tot_cdf(const ActivityTimingParams& t, double x) {
    return truncnorm_cdf(x, t.eyes.mean, t.eyes.sd) * truncnorm_cdf(x, t.foot.mean, t.foot.sd) *
           truncnorm_cdf(x, t.hands.mean, t.hands.sd);
}

double analytic_tot_mean(const ActivityTimingParams& t) {
    return kTargetMin + integrate([&t](double x) { return 1.0 - analytic_tot_cdf(t, x); }, kTargetMin, kTargetMax);
}

double analytic_tot_abs_deviation(const ActivityTimingParams& t, double about) {
    const double m = std::clamp(about, kTargetMin, kTargetMax);
    const double below = integrate([&t](double x) { return analytic_tot_cdf(t, x); }, kTargetMin, m);
    const double above = integrate([&t](double x) { return 1.0 - analytic_tot_cdf(t, x); }, m, kTargetMax);
    return below + above;
}

double analytic_marker_mean(const MarkerDistribution& m) {
    return kTargetMin +
           integrate([&m](double x) { return 1.0 - truncnorm_cdf(x, m.mean, m.sd); }, kTargetMin, kTargetMax);
}

// --- Target sampling ---------------------------------------------------------

namespace {

double draw_truncated(Rng& rng, const MarkerDistribution& m) {
    for (;;) {
        const double v = rng.normal(m.mean, m.sd);
        if (v >= kTargetMin && v <= kTargetMax) return v;
    }
}

}  // namespace

Targets draw_targets(ActivityClass activity, const GeneratorParams& params, Rng& rng) {
    const auto& t = params.timing[static_cast<std::size_t>(activity)];
    Targets out;
    out.t_e = draw_truncated(rng, t.eyes);
    out.t_f = draw_truncated(rng, t.foot);
    out.t_h = draw_truncated(rng, t.hands);
    return out;
}

// --- Feature trajectory synthesis ------------------------------------------------

namespace {

using features::kFootDim;
using features::kGazeDim;
using features::kHandDim;
using features::kObjectDim;

template <std::size_t N>
using Dist = std::array<double, N>;

template <std::size_t N>
Dist<N> normalized(Dist<N> v) {
    double s = 0.0;
    for (double x : v) s += x;
    for (double& x : v) x /= s;
    return v;
}

template <std::size_t N>
Dist<N> lerp(const Dist<N>& a, const Dist<N>& b, double u) {
    Dist<N> out;
    for (std::size_t i = 0; i < N; ++i) out[i] = a[i] + (b[i] - a[i]) * u;
    return out;
}

// Per-activity stationary signature held before the TOR.
struct ActivitySignature {
    Dist<kGazeDim> gaze;
    Dist<kHandDim> hand_left, hand_right;
    Dist<kObjectDim> object_left, object_right;
    double stereo_left, stereo_right;
};

// Shared pre-TOR foot signature: the foot idles away from the pedals while
// the vehicle drives itself.
const Dist<kFootDim> kFootIdle = normalized<kFootDim>({0.86, 0.01, 0.02, 0.06, 0.05});

// Transition endpoints.
const Dist<kGazeDim> kGazeOnRoad = normalized<kGazeDim>({0.965, 0.005, 0.005, 0.005, 0.005, 0.005, 0.005, 0.005});
const Dist<kHandDim> kHandAirborne = normalized<kHandDim>({0.03, 0.88, 0.03, 0.02, 0.02, 0.02});
const Dist<kHandDim> kHandHovering = normalized<kHandDim>({0.02, 0.06, 0.86, 0.02, 0.02, 0.02});
const Dist<kHandDim> kHandOnWheel = normalized<kHandDim>({0.01, 0.02, 0.03, 0.92, 0.01, 0.01});
const Dist<kObjectDim> kObjectFree = normalized<kObjectDim>({0.94, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01});
const Dist<kFootDim> kFootHovering = normalized<kFootDim>({0.06, 0.02, 0.01, 0.88, 0.03});
const Dist<kFootDim> kFootOnBrake = normalized<kFootDim>({0.02, 0.92, 0.01, 0.03, 0.02});
constexpr double kStereoOnWheel = 0.02;  // m, comfortably under the 0.05 contract

const ActivitySignature& activity_signature(ActivityClass a) {
    static const std::array<ActivitySignature, kNumActivities> table = [] {
        std::array<ActivitySignature, kNumActivities> t{};
        const auto idx = [](ActivityClass a) { return static_cast<std::size_t>(a); };

        t[idx(ActivityClass::kAttentive)] = {
            normalized<kGazeDim>({0.70, 0.08, 0.05, 0.05, 0.05, 0.01, 0.03, 0.03}),
            normalized<kHandDim>({0.35, 0.10, 0.20, 0.30, 0.03, 0.02}),
            normalized<kHandDim>({0.35, 0.10, 0.20, 0.30, 0.03, 0.02}),
            kObjectFree, kObjectFree, 0.15, 0.15};
        t[idx(ActivityClass::kTalkingToCopassenger)] = {
            normalized<kGazeDim>({0.45, 0.04, 0.06, 0.03, 0.05, 0.25, 0.05, 0.07}),
            normalized<kHandDim>({0.50, 0.30, 0.05, 0.05, 0.05, 0.05}),
            normalized<kHandDim>({0.40, 0.40, 0.05, 0.05, 0.05, 0.05}),
            kObjectFree, kObjectFree, 0.35, 0.35};
        t[idx(ActivityClass::kLapEyesClosed)] = {
            normalized<kGazeDim>({0.04, 0.02, 0.01, 0.01, 0.01, 0.01, 0.05, 0.85}),
            normalized<kHandDim>({0.80, 0.10, 0.03, 0.02, 0.03, 0.02}),
            normalized<kHandDim>({0.80, 0.10, 0.03, 0.02, 0.03, 0.02}),
            kObjectFree, kObjectFree, 0.40, 0.40};
        t[idx(ActivityClass::kTexting)] = {
            normalized<kGazeDim>({0.08, 0.02, 0.01, 0.01, 0.01, 0.01, 0.24, 0.62}),
            normalized<kHandDim>({0.55, 0.35, 0.02, 0.02, 0.04, 0.02}),
            normalized<kHandDim>({0.35, 0.55, 0.02, 0.02, 0.04, 0.02}),
            normalized<kObjectDim>({0.56, 0.35, 0.03, 0.02, 0.02, 0.01, 0.01}),
            normalized<kObjectDim>({0.06, 0.86, 0.03, 0.02, 0.01, 0.01, 0.01}),
            0.45, 0.50};
        t[idx(ActivityClass::kPhoneCall)] = {
            normalized<kGazeDim>({0.50, 0.05, 0.04, 0.03, 0.04, 0.08, 0.06, 0.20}),
            normalized<kHandDim>({0.55, 0.25, 0.05, 0.05, 0.05, 0.05}),
            normalized<kHandDim>({0.15, 0.70, 0.05, 0.04, 0.03, 0.03}),
            kObjectFree,
            normalized<kObjectDim>({0.07, 0.85, 0.02, 0.02, 0.02, 0.01, 0.01}),
            0.30, 0.50};
        t[idx(ActivityClass::kInfotainment)] = {
            normalized<kGazeDim>({0.20, 0.03, 0.02, 0.02, 0.02, 0.01, 0.65, 0.05}),
            normalized<kHandDim>({0.45, 0.20, 0.10, 0.15, 0.05, 0.05}),
            normalized<kHandDim>({0.10, 0.25, 0.05, 0.03, 0.02, 0.55}),
            kObjectFree, kObjectFree, 0.25, 0.45};
        t[idx(ActivityClass::kCountingChange)] = {
            normalized<kGazeDim>({0.10, 0.02, 0.01, 0.01, 0.01, 0.02, 0.13, 0.70}),
            normalized<kHandDim>({0.40, 0.45, 0.04, 0.03, 0.05, 0.03}),
            normalized<kHandDim>({0.40, 0.45, 0.04, 0.03, 0.05, 0.03}),
            normalized<kObjectDim>({0.12, 0.02, 0.01, 0.02, 0.02, 0.01, 0.80}),
            normalized<kObjectDim>({0.12, 0.02, 0.01, 0.02, 0.02, 0.01, 0.80}),
            0.40, 0.40};
        t[idx(ActivityClass::kReading)] = {
            normalized<kGazeDim>({0.12, 0.02, 0.01, 0.01, 0.01, 0.01, 0.14, 0.68}),
            normalized<kHandDim>({0.35, 0.50, 0.04, 0.03, 0.04, 0.04}),
            normalized<kHandDim>({0.35, 0.50, 0.04, 0.03, 0.04, 0.04}),
            normalized<kObjectDim>({0.08, 0.02, 0.02, 0.01, 0.01, 0.85, 0.01}),
            normalized<kObjectDim>({0.08, 0.02, 0.02, 0.01, 0.01, 0.85, 0.01}),
            0.45, 0.45};
        return t;
    }();
    return table[static_cast<std::size_t>(a)];
}

double smoothstep(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

// Piecewise-linear blend through anchor distributions at anchor phases.
template <std::size_t N, std::size_t K>
Dist<N> blend_through(const std::array<std::pair<double, const Dist<N>*>, K>& anchors, double u) {
    if (u <= anchors.front().first) return *anchors.front().second;
    for (std::size_t k = 1; k < K; ++k) {
        if (u <= anchors[k].first) {
            const double span = anchors[k].first - anchors[k - 1].first;
            const double w = span > 0.0 ? (u - anchors[k - 1].first) / span : 1.0;
            return lerp(*anchors[k - 1].second, *anchors[k].second, w);
        }
    }
    return *anchors.back().second;
}

template <std::size_t N>
void add_noise_and_renormalize(Dist<N>& v, double amplitude, Rng& rng) {
    double sum = 0.0;
    for (double& x : v) {
        x = std::max(x + amplitude * rng.uniform(-1.0, 1.0), 1e-4);
        sum += x;
    }
    for (double& x : v) x /= sum;
    // Quantize to the 1e-6 grid to keep serialized frames compact, then pin
    // the largest component so the family sums to exactly 1.
    sum = 0.0;
    std::size_t largest = 0;
    for (std::size_t i = 0; i < N; ++i) {
        v[i] = std::round(v[i] * 1e6) / 1e6;
        sum += v[i];
        if (v[i] > v[largest]) largest = i;
    }
    v[largest] += 1.0 - sum;
}

}  // namespace

Episode generate_episode(ActivityClass activity, const GeneratorParams& params, Rng& rng,
                         const std::string& id) {
    const double r = params.rate_hz;
    const std::size_t n = frames_per_episode(r);
    const std::size_t tor = tor_frame_index(r);
    const Targets targets = draw_targets(activity, params, rng);
    const ActivitySignature& sig = activity_signature(activity);

    // Transitions complete half a frame early so the frame nearest each
    // target already holds the completed state.
    const double half_frame = 0.5 / r;
    const double d_eyes = std::max(targets.t_e - half_frame, 1e-3);
    const double d_foot = std::max(targets.t_f - half_frame, 1e-3);
    const double d_hands = std::max(targets.t_h - half_frame, 1e-3);
    const double hover_start = 1.0 - params.hover_dwell_fraction;

    Episode ep;
    ep.id = id;
    ep.rate_hz = r;
    ep.tor_index = tor;
    ep.targets = targets;
    ep.activity = activity;
    ep.provenance = Provenance::kSynthetic;
    ep.frames.reserve(n);

    const std::array<std::pair<double, const Dist<kHandDim>*>, 4> hand_left_anchors = {
        std::pair{0.25, &sig.hand_left}, {0.45, &kHandAirborne}, {hover_start, &kHandHovering}, {1.0, &kHandOnWheel}};
    const std::array<std::pair<double, const Dist<kHandDim>*>, 4> hand_right_anchors = {
        std::pair{0.25, &sig.hand_right}, {0.45, &kHandAirborne}, {hover_start, &kHandHovering}, {1.0, &kHandOnWheel}};
    const std::array<std::pair<double, const Dist<kObjectDim>*>, 2> object_left_anchors = {
        std::pair{0.10, &sig.object_left}, {0.45, &kObjectFree}};
    const std::array<std::pair<double, const Dist<kObjectDim>*>, 2> object_right_anchors = {
        std::pair{0.10, &sig.object_right}, {0.45, &kObjectFree}};
    const std::array<std::pair<double, const Dist<kFootDim>*>, 3> foot_anchors = {
        std::pair{0.20, &kFootIdle}, {hover_start, &kFootHovering}, {1.0, &kFootOnBrake}};

    for (std::size_t i = 0; i < n; ++i) {
        const double tau = (static_cast<double>(i) - static_cast<double>(tor)) / r;  // s since TOR
        FeatureFrame f;
        f.timestamp = std::round(static_cast<double>(i) / r * 1e6) / 1e6;

        const double u_eyes = tau <= 0.0 ? 0.0 : std::clamp(tau / d_eyes, 0.0, 1.0);
        const double u_foot = tau <= 0.0 ? 0.0 : std::clamp(tau / d_foot, 0.0, 1.0);
        const double u_hands = tau <= 0.0 ? 0.0 : std::clamp(tau / d_hands, 0.0, 1.0);

        const double gaze_ramp = std::pow(smoothstep(u_eyes), params.gaze_switch_sharpness);
        f.gaze = lerp(sig.gaze, kGazeOnRoad, gaze_ramp);
        f.foot = blend_through<kFootDim, 3>(foot_anchors, u_foot);
        f.hand_left = blend_through<kHandDim, 4>(hand_left_anchors, u_hands);
        f.hand_right = blend_through<kHandDim, 4>(hand_right_anchors, u_hands);
        f.object_left = blend_through<kObjectDim, 2>(object_left_anchors, u_hands);
        f.object_right = blend_through<kObjectDim, 2>(object_right_anchors, u_hands);
        f.stereo[0] = sig.stereo_left + (kStereoOnWheel - sig.stereo_left) * u_hands;
        f.stereo[1] = sig.stereo_right + (kStereoOnWheel - sig.stereo_right) * u_hands;

        add_noise_and_renormalize(f.foot, params.feature_noise, rng);
        add_noise_and_renormalize(f.gaze, params.feature_noise, rng);
        add_noise_and_renormalize(f.hand_left, params.feature_noise, rng);
        add_noise_and_renormalize(f.hand_right, params.feature_noise, rng);
        add_noise_and_renormalize(f.object_left, params.feature_noise, rng);
        add_noise_and_renormalize(f.object_right, params.feature_noise, rng);
        for (double& d : f.stereo) {
            d = std::max(d + 0.5 * params.feature_noise * rng.uniform(-1.0, 1.0), 0.0);
            d = std::round(d * 1e4) / 1e4;
        }
        ep.frames.push_back(f);
    }
    return ep;
}

// --- Segmentation and labels ------------------------------------------------

SegmentationResult segment_session(const std::vector<FeatureFrame>& stream, const std::vector<double>& tor_times,
                                   double rate_hz, const std::string& id_prefix) {
    if (rate_hz <= 0.0) throw ConfigError("rate must be positive");
    for (std::size_t i = 1; i < stream.size(); ++i)
        if (!(stream[i].timestamp > stream[i - 1].timestamp))
            throw DataError("stream timestamps not strictly increasing at frame " + std::to_string(i));

    SegmentationResult result;
    const std::size_t pre = tor_frame_index(rate_hz);
    const std::size_t len = frames_per_episode(rate_hz);
    std::size_t seq = 0;
    for (const double tor_time : tor_times) {
        if (stream.empty() || tor_time < stream.front().timestamp || tor_time > stream.back().timestamp) {
            result.skipped.push_back("TOR at t=" + format_double(tor_time) + " outside the stream span");
            continue;
        }
        // First frame at or after the request.
        std::size_t tor_idx = 0;
        while (tor_idx < stream.size() && stream[tor_idx].timestamp < tor_time) ++tor_idx;
        if (tor_idx < pre) {
            result.skipped.push_back("TOR at t=" + format_double(tor_time) + " has less than 20 s of pre-roll");
            continue;
        }
        const std::size_t start = tor_idx - pre;
        if (start + len > stream.size()) {
            result.skipped.push_back("TOR at t=" + format_double(tor_time) + " has less than 10 s of post-roll");
            continue;
        }
        Episode ep;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "_%04zu", seq++);
        ep.id = id_prefix + buf;
        ep.rate_hz = rate_hz;
        ep.tor_index = pre;
        ep.provenance = Provenance::kReal;
        ep.frames.assign(stream.begin() + static_cast<std::ptrdiff_t>(start),
                         stream.begin() + static_cast<std::ptrdiff_t>(start + len));
        result.episodes.push_back(std::move(ep));
    }
    return result;
}

Episode annotate_targets(const Episode& ep, double t_e, double t_f, double t_h) {
    for (const auto& [t, name] : {std::pair{t_e, "t_e"}, {t_f, "t_f"}, {t_h, "t_h"}})
        if (!(t > 0.0) || t > kTargetMax)
            throw DataError(std::string("marker ") + name + " = " + format_double(t) +
                            " outside the (0, 10] post-roll window");
    Episode out = ep;
    out.targets = Targets{t_e, t_f, t_h};
    return out;
}

// --- Augmentation -------------------------------------------------------------

bool augmentable(const Episode& ep, double guard) {
    if (!ep.targets) return false;
    const double min_t = std::min(ep.targets->t_e, std::min(ep.targets->t_f, ep.targets->t_h));
    return min_t > guard;
}

Episode shift_episode(const Episode& ep, double delta, const std::string& new_id) {
    if (!ep.targets) throw DataError("cannot shift an unlabeled episode");
    if (delta < 0.0) throw DataError("shift must be non-negative");
    const double min_t = std::min(ep.targets->t_e, std::min(ep.targets->t_f, ep.targets->t_h));
    if (delta >= min_t) throw DataError("shift must stay below the earliest target");

    const std::size_t n = ep.frames.size();
    const auto shift_frames = static_cast<std::size_t>(std::lround(delta * ep.rate_hz));
    Episode out;
    out.id = new_id;
    out.rate_hz = ep.rate_hz;
    out.tor_index = ep.tor_index;
    out.activity = ep.activity;
    out.provenance = Provenance::kAugmented;
    out.source_id = ep.source_id.empty() ? ep.id : ep.source_id;
    out.targets = Targets{ep.targets->t_e - delta, ep.targets->t_f - delta, ep.targets->t_h - delta};
    out.frames.reserve(n);
    const double step = 1.0 / ep.rate_hz;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = i + shift_frames;
        if (src < n) {
            out.frames.push_back(ep.frames[src]);
        } else {
            // Past the source window: hold the final frame, timestamps keep
            // advancing at the frame rate.
            FeatureFrame f = ep.frames[n - 1];
            f.timestamp = ep.frames[n - 1].timestamp + static_cast<double>(src - (n - 1)) * step;
            out.frames.push_back(f);
        }
    }
    return out;
}

std::vector<Episode> augment_tor(const Episode& ep, Rng& rng, std::size_t k, double guard,
                                 std::vector<std::string>* warnings) {
    std::vector<Episode> out;
    if (!augmentable(ep, guard)) {
        if (warnings)
            warnings->push_back("episode " + ep.id + " not augmentable (earliest target within the guard)");
        return out;
    }
    const double min_t = std::min(ep.targets->t_e, std::min(ep.targets->t_f, ep.targets->t_h));
    const double span = min_t - guard;
    out.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
        double u = rng.uniform();
        while (u == 0.0) u = rng.uniform();
        const double delta = u * span;
        out.push_back(shift_episode(ep, delta, ep.id + "_aug" + std::to_string(j)));
    }
    return out;
}

// --- Dataset assembly ---------------------------------------------------------

const Episode* Dataset::find(const std::string& id) const {
    for (const auto& ep : episodes)
        if (ep.id == id) return &ep;
    return nullptr;
}

Dataset generate_dataset(const std::array<std::size_t, kNumActivities>& counts, const GeneratorParams& params,
                         std::uint64_t seed) {
    params.validate();
    Dataset ds;
    ds.manifest.seed = seed;
    ds.manifest.rate_hz = params.rate_hz;
    ds.manifest.generator = params;
    std::size_t index = 0;
    for (std::size_t a = 0; a < kNumActivities; ++a) {
        const auto activity = static_cast<ActivityClass>(a);
        for (std::size_t k = 0; k < counts[a]; ++k, ++index) {
            Rng rng = Rng::fork(seed, index);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "syn_%05zu", index);
            ds.episodes.push_back(generate_episode(activity, params, rng, buf));
        }
        ds.manifest.counts[features::activity_name(activity)] = counts[a];
    }
    return ds;
}

Dataset generate_cds_mirror(const GeneratorParams& params, std::uint64_t seed) {
    return generate_dataset(kCdsActivityCounts, params, seed);
}

DatasetManifest split_dataset(const std::vector<Episode>& episodes, const std::array<double, 3>& ratios,
                              std::uint64_t seed) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    for (double r : ratios)
        if (r < 0.0) throw ConfigError("split ratios must be non-negative");

    DatasetManifest manifest;
    manifest.seed = seed;
    if (!episodes.empty()) manifest.rate_hz = episodes.front().rate_hz;

    // Stratify the source (non-augmented) episodes by activity.
    std::map<int, std::vector<const Episode*>> by_activity;
    for (const auto& ep : episodes) {
        manifest.counts[ep.activity ? features::activity_name(*ep.activity) : "unlabeled"]++;
        if (ep.provenance == Provenance::kAugmented) continue;
        by_activity[ep.activity ? static_cast<int>(*ep.activity) : -1].push_back(&ep);
    }

    for (auto& [activity, group] : by_activity) {
        Rng rng = Rng::fork(seed, static_cast<std::uint64_t>(activity + 1));
        rng.shuffle(group);
        const std::size_t n = group.size();
        std::array<std::size_t, 3> take{};
        std::array<double, 3> frac{};
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double quota = ratios[static_cast<std::size_t>(s)] * static_cast<double>(n);
            take[static_cast<std::size_t>(s)] = static_cast<std::size_t>(quota);
            frac[static_cast<std::size_t>(s)] = quota - static_cast<double>(take[static_cast<std::size_t>(s)]);
            assigned += take[static_cast<std::size_t>(s)];
        }
        while (assigned < n) {
            // Largest remainder first; ties resolve train, val, test.
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[static_cast<std::size_t>(s)] > frac[static_cast<std::size_t>(best)]) best = s;
            take[static_cast<std::size_t>(best)]++;
            frac[static_cast<std::size_t>(best)] = -1.0;
            ++assigned;
        }
        std::size_t cursor = 0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t k = 0; k < take[static_cast<std::size_t>(s)]; ++k)
                manifest.splits[group[cursor++]->id] = static_cast<Split>(s);
    }

    // Augmented episodes never leak across splits.
    for (const auto& ep : episodes) {
        if (ep.provenance != Provenance::kAugmented) continue;
        const auto it = manifest.splits.find(ep.source_id);
        if (it == manifest.splits.end())
            throw DataError("augmented episode " + ep.id + " has unknown source " + ep.source_id);
        manifest.splits[ep.id] = it->second;
    }
    return manifest;
}

std::size_t augment_dataset(Dataset& ds, std::size_t k, double guard, std::uint64_t seed,
                            std::vector<std::string>* warnings) {
    std::vector<Episode> added;
    for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
        const Episode& ep = ds.episodes[i];
        if (ep.provenance == Provenance::kAugmented || !ep.targets) continue;
        Rng rng = Rng::fork(seed, i);
        for (auto& aug : augment_tor(ep, rng, k, guard, warnings)) added.push_back(std::move(aug));
    }
    for (auto& aug : added) {
        if (aug.activity) ds.manifest.counts[features::activity_name(*aug.activity)]++;
        if (!ds.manifest.splits.empty()) {
            const auto it = ds.manifest.splits.find(aug.source_id);
            if (it == ds.manifest.splits.end())
                throw DataError("augmented episode " + aug.id + " has unknown source " + aug.source_id);
            ds.manifest.splits[aug.id] = it->second;
        }
        ds.episodes.push_back(std::move(aug));
    }
    return added.size();
}

std::vector<const Episode*> episodes_in_split(const Dataset& ds, Split split) {
    std::vector<const Episode*> out;
    for (const auto& ep : ds.episodes) {
        const auto it = ds.manifest.splits.find(ep.id);
        if (it != ds.manifest.splits.end() && it->second == split) out.push_back(&ep);
    }
    return out;
}

// --- Persistence ---------------------------------------------------------------

namespace {

json generator_to_json(const GeneratorParams& p) {
    json t = json::object();
    for (std::size_t i = 0; i < kNumActivities; ++i) {
        const auto& a = p.timing[i];
        t[features::activity_name(static_cast<ActivityClass>(i))] = {
            {"eyes", {{"mean", a.eyes.mean}, {"sd", a.eyes.sd}}},
            {"foot", {{"mean", a.foot.mean}, {"sd", a.foot.sd}}},
            {"hands", {{"mean", a.hands.mean}, {"sd", a.hands.sd}}},
        };
    }
    return json{{"timing", t},
                {"hover_dwell_fraction", p.hover_dwell_fraction},
                {"gaze_switch_sharpness", p.gaze_switch_sharpness},
                {"feature_noise", p.feature_noise},
                {"rate_hz", p.rate_hz}};
}

GeneratorParams generator_from_json(const json& j) {
    GeneratorParams p = GeneratorParams::defaults();
    const json& t = j.at("timing");
    for (std::size_t i = 0; i < kNumActivities; ++i) {
        const json& a = t.at(features::activity_name(static_cast<ActivityClass>(i)));
        auto& out = p.timing[i];
        out.eyes = {a.at("eyes").at("mean").get<double>(), a.at("eyes").at("sd").get<double>()};
        out.foot = {a.at("foot").at("mean").get<double>(), a.at("foot").at("sd").get<double>()};
        out.hands = {a.at("hands").at("mean").get<double>(), a.at("hands").at("sd").get<double>()};
    }
    p.hover_dwell_fraction = j.at("hover_dwell_fraction").get<double>();
    p.gaze_switch_sharpness = j.at("gaze_switch_sharpness").get<double>();
    p.feature_noise = j.at("feature_noise").get<double>();
    p.rate_hz = j.at("rate_hz").get<double>();
    return p;
}

}  // namespace

std::string episode_to_json(const Episode& ep) {
    json j;
    j["id"] = ep.id;
    j["rate_hz"] = ep.rate_hz;
    j["tor_index"] = ep.tor_index;
    j["provenance"] = provenance_name(ep.provenance);
    if (!ep.source_id.empty()) j["source_id"] = ep.source_id;
    if (ep.activity) j["activity"] = static_cast<int>(*ep.activity);
    if (ep.targets)
        j["targets"] = {{"t_e", ep.targets->t_e}, {"t_f", ep.targets->t_f}, {"t_h", ep.targets->t_h}};
    // Frames as raw JSON lines to avoid re-parsing through the json object.
    std::string out = j.dump();
    out.pop_back();  // strip trailing '}'
    out += ",\"frames\":[";
    for (std::size_t i = 0; i < ep.frames.size(); ++i) {
        if (i) out += ',';
        out += features::frame_to_json(ep.frames[i]);
    }
    out += "]}";
    return out;
}

Episode episode_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError(std::string("unparsable episode JSON: ") + e.what());
    }
    Episode ep;
    ep.id = j.at("id").get<std::string>();
    ep.rate_hz = j.at("rate_hz").get<double>();
    ep.tor_index = j.at("tor_index").get<std::size_t>();
    ep.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    if (j.contains("source_id")) ep.source_id = j.at("source_id").get<std::string>();
    if (j.contains("activity") && !j.at("activity").is_null())
        ep.activity = features::activity_from_code(j.at("activity").get<int>());
    if (j.contains("targets") && !j.at("targets").is_null()) {
        const json& t = j.at("targets");
        ep.targets = Targets{t.at("t_e").get<double>(), t.at("t_f").get<double>(), t.at("t_h").get<double>()};
    }
    for (const json& f : j.at("frames")) ep.frames.push_back(features::frame_from_json(f.dump()));
    const auto violations = validate_episode(ep);
    if (!violations.empty()) {
        std::string msg = "episode " + ep.id + " invalid:";
        for (const auto& v : violations) msg += " " + v + ";";
        throw DataError(msg);
    }
    return ep;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        json m;
        m["seed"] = ds.manifest.seed;
        m["rate_hz"] = ds.manifest.rate_hz;
        m["counts"] = ds.manifest.counts;
        json splits = json::object();
        for (const auto& [id, s] : ds.manifest.splits) splits[id] = split_name(s);
        m["splits"] = splits;
        m["normalization"] = {{"stereo_scale", ds.manifest.stereo_norm.scale},
                              {"stereo_offset", ds.manifest.stereo_norm.offset}};
        if (ds.manifest.generator) m["generator_params"] = generator_to_json(*ds.manifest.generator);
        std::ofstream out(fs::path(dir) / "manifest.json");
        if (!out) throw PersistenceError("cannot write manifest in " + dir);
        out << m.dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "episodes.jsonl");
        if (!out) throw PersistenceError("cannot write episodes in " + dir);
        for (const auto& ep : ds.episodes) out << episode_to_json(ep) << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    {
        std::ifstream in(fs::path(dir) / "manifest.json");
        if (!in) throw PersistenceError("cannot open manifest.json in " + dir);
        json m;
        try {
            in >> m;
        } catch (const json::exception& e) {
            throw PersistenceError(std::string("corrupt manifest.json: ") + e.what());
        }
        ds.manifest.seed = m.at("seed").get<std::uint64_t>();
        ds.manifest.rate_hz = m.at("rate_hz").get<double>();
        for (const auto& [name, count] : m.at("counts").items())
            ds.manifest.counts[name] = count.get<std::size_t>();
        for (const auto& [id, s] : m.at("splits").items())
            ds.manifest.splits[id] = split_from_string(s.get<std::string>());
        if (m.contains("normalization")) {
            ds.manifest.stereo_norm.scale = m.at("normalization").at("stereo_scale").get<double>();
            ds.manifest.stereo_norm.offset = m.at("normalization").at("stereo_offset").get<double>();
        }
        if (m.contains("generator_params"))
            ds.manifest.generator = generator_from_json(m.at("generator_params"));
    }
    {
        std::ifstream in(fs::path(dir) / "episodes.jsonl");
        if (!in) throw PersistenceError("cannot open episodes.jsonl in " + dir);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ds.episodes.push_back(episode_from_json(line));
        }
    }
    return ds;
}

}  // namespace totkit::dataset
