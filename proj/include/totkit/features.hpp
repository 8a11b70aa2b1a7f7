#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace totkit::features {

// Family sizes of the per-frame driver-state representation.
inline constexpr std::size_t kFootDim = 5;
inline constexpr std::size_t kGazeDim = 8;
inline constexpr std::size_t kHandDim = 6;    // per hand
inline constexpr std::size_t kStereoDim = 2;  // left/right hand distance to wheel, meters
inline constexpr std::size_t kObjectDim = 7;  // per hand
inline constexpr std::size_t kFullDim =
    kFootDim + kGazeDim + 2 * kHandDim + kStereoDim + 2 * kObjectDim;  // 41

// Index names within each probability family, in canonical order.
enum FootActivity : std::size_t { kFootAway = 0, kFootOnBrake, kFootOnGas, kFootHoverBrake, kFootHoverGas };
enum GazeZone : std::size_t {
    kGazeFront = 0,
    kGazeSpeedometer,
    kGazeRearview,
    kGazeLeftMirror,
    kGazeRightMirror,
    kGazeShoulder,
    kGazeInfotainment,
    kGazeEyesDown
};
enum HandActivity : std::size_t { kHandLap = 0, kHandAir, kHandHoverWheel, kHandWheel, kHandCupholder, kHandInfotainment };
enum HandObject : std::size_t { kObjNone = 0, kObjCellphone, kObjTablet, kObjFood, kObjBeverage, kObjReading, kObjOther };

// One timestamped vector of driver-state observations. Immutable by
// convention: nothing in the library mutates a frame after construction.
struct FeatureFrame {
    double timestamp = 0.0;  // seconds, non-negative, monotone within a stream
    std::array<double, kFootDim> foot{};
    std::array<double, kGazeDim> gaze{};
    std::array<double, kHandDim> hand_left{};
    std::array<double, kHandDim> hand_right{};
    std::array<double, kStereoDim> stereo{};  // meters, non-negative
    std::array<double, kObjectDim> object_left{};
    std::array<double, kObjectDim> object_right{};

    bool operator==(const FeatureFrame&) const = default;
};

// Selects which feature families a model consumes. Canonical flag order is
// F, G, H, S, O and the flattened layout never deviates from it.
struct FeatureMask {
    bool foot = false;
    bool gaze = false;
    bool hand = false;    // both hands
    bool stereo = false;
    bool object = false;  // both hands

    bool any() const { return foot || gaze || hand || stereo || object; }

    std::size_t dim() const {
        std::size_t d = 0;
        if (foot) d += kFootDim;
        if (gaze) d += kGazeDim;
        if (hand) d += 2 * kHandDim;
        if (stereo) d += kStereoDim;
        if (object) d += 2 * kObjectDim;
        return d;
    }

    static FeatureMask all() { return {true, true, true, true, true}; }

    // Compact text form, e.g. "GHO"; parse accepts the same letters in any
    // order plus optional '+' separators ("G+H+O").
    std::string to_string() const;
    static FeatureMask parse(const std::string& text);

    bool operator==(const FeatureMask&) const = default;
};

// The eight secondary-activity labels with stable codes 0-7.
enum class ActivityClass : std::uint8_t {
    kAttentive = 0,
    kTalkingToCopassenger = 1,
    kLapEyesClosed = 2,
    kTexting = 3,
    kPhoneCall = 4,
    kInfotainment = 5,
    kCountingChange = 6,
    kReading = 7,
};

inline constexpr std::size_t kNumActivities = 8;

extern const std::array<ActivityClass, kNumActivities> kAllActivities;

const char* activity_name(ActivityClass a);
ActivityClass activity_from_code(int code);

// Probability vectors must sum to 1 within this tolerance to be valid.
inline constexpr double kProbSumTolerance = 1e-6;
// Ingested frames whose sums are off by at most this much are renormalized
// with a warning instead of rejected; classifier outputs drift slightly.
inline constexpr double kRenormalizableDrift = 1e-3;

// Returns every violated invariant, not just the first; empty means valid.
std::vector<std::string> validate_frame(const FeatureFrame& frame);

bool frame_is_valid(const FeatureFrame& frame);

// Concatenates the enabled families in canonical order
// F, G, H(left,right), S, O(left,right).
// Throws ConfigError on an empty mask, ValidationError on an invalid frame.
std::vector<double> flatten(const FeatureFrame& frame, const FeatureMask& mask);

// Parse/ingest path: renormalizes probability vectors whose sum drifted by
// at most kRenormalizableDrift (reporting a warning through `warn`, if set)
// and rejects anything worse with ValidationError.
FeatureFrame ingest_frame(FeatureFrame frame, const std::function<void(const std::string&)>& warn = {});

// --- Serialization -------------------------------------------------------
// JSONL object keys: t, foot[5], gaze[8], hand_l[6], hand_r[6], stereo[2],
// obj_l[7], obj_r[7]. The CSV variant uses the same canonical column order
// with a named header.

std::string frame_to_json(const FeatureFrame& frame);
FeatureFrame frame_from_json(const std::string& line, const std::function<void(const std::string&)>& warn = {});

std::string frame_csv_header();
std::string frame_to_csv(const FeatureFrame& frame);
FeatureFrame frame_from_csv(const std::string& line, const std::function<void(const std::string&)>& warn = {});

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

}  // namespace totkit::features
