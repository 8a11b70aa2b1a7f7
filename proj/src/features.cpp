#include "totkit/features.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "totkit/errors.hpp"

namespace totkit::features {

using nlohmann::json;

const std::array<ActivityClass, kNumActivities> kAllActivities = {
    ActivityClass::kAttentive,      ActivityClass::kTalkingToCopassenger,
    ActivityClass::kLapEyesClosed,  ActivityClass::kTexting,
    ActivityClass::kPhoneCall,      ActivityClass::kInfotainment,
    ActivityClass::kCountingChange, ActivityClass::kReading,
};

const char* activity_name(ActivityClass a) {
    switch (a) {
        case ActivityClass::kAttentive: return "attentive";
        case ActivityClass::kTalkingToCopassenger: return "talking-to-copassenger";
        case ActivityClass::kLapEyesClosed: return "lap-eyes-closed";
        case ActivityClass::kTexting: return "texting";
        case ActivityClass::kPhoneCall: return "phone-call";
        case ActivityClass::kInfotainment: return "infotainment";
        case ActivityClass::kCountingChange: return "counting-change";
        case ActivityClass::kReading: return "reading";
    }
    throw ValidationError("unknown activity code");
}

ActivityClass activity_from_code(int code) {
    if (code < 0 || code >= static_cast<int>(kNumActivities))
        throw ValidationError("activity code out of range: " + std::to_string(code));
    return static_cast<ActivityClass>(code);
}

std::string FeatureMask::to_string() const {
    std::string s;
    if (foot) s += 'F';
    if (gaze) s += 'G';
    if (hand) s += 'H';
    if (stereo) s += 'S';
    if (object) s += 'O';
    return s;
}

FeatureMask FeatureMask::parse(const std::string& text) {
    FeatureMask m;
    for (char c : text) {
        switch (c) {
            case 'F': case 'f': m.foot = true; break;
            case 'G': case 'g': m.gaze = true; break;
            case 'H': case 'h': m.hand = true; break;
            case 'S': case 's': m.stereo = true; break;
            case 'O': case 'o': m.object = true; break;
            case '+': case ' ': break;
            default:
                throw ConfigError(std::string("unknown feature family '") + c + "' in mask: " + text);
        }
    }
    return m;
}

namespace {

template <std::size_t N>
void check_prob_vector(const std::array<double, N>& v, const char* name,
                       std::vector<std::string>& out) {
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double p = v[i];
        if (!std::isfinite(p)) {
            out.push_back(std::string(name) + "[" + std::to_string(i) + "] is not finite");
            return;
        }
        if (p < 0.0 || p > 1.0)
            out.push_back(std::string(name) + "[" + std::to_string(i) + "] = " + format_double(p) +
                          " outside [0, 1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance)
        out.push_back(std::string(name) + " sum = " + format_double(sum));
}

template <std::size_t N>
bool renormalize(std::array<double, N>& v) {
    double sum = 0.0;
    for (double p : v) {
        if (!std::isfinite(p) || p < 0.0) return false;
        sum += p;
    }
    if (std::abs(sum - 1.0) > kRenormalizableDrift || sum <= 0.0) return false;
    for (double& p : v) p /= sum;
    return true;
}

template <std::size_t N>
double vector_sum(const std::array<double, N>& v) {
    double s = 0.0;
    for (double p : v) s += p;
    return s;
}

}  // namespace

std::vector<std::string> validate_frame(const FeatureFrame& frame) {
    std::vector<std::string> violations;
    if (!std::isfinite(frame.timestamp) || frame.timestamp < 0.0)
        violations.push_back("timestamp " + format_double(frame.timestamp) + " is negative or non-finite");
    check_prob_vector(frame.foot, "foot", violations);
    check_prob_vector(frame.gaze, "gaze", violations);
    check_prob_vector(frame.hand_left, "hand_left", violations);
    check_prob_vector(frame.hand_right, "hand_right", violations);
    check_prob_vector(frame.object_left, "object_left", violations);
    check_prob_vector(frame.object_right, "object_right", violations);
    for (std::size_t i = 0; i < kStereoDim; ++i) {
        const double d = frame.stereo[i];
        if (!std::isfinite(d))
            violations.push_back("stereo[" + std::to_string(i) + "] is not finite");
        else if (d < 0.0)
            violations.push_back("negative distance stereo[" + std::to_string(i) + "] = " + format_double(d));
    }
    return violations;
}

bool frame_is_valid(const FeatureFrame& frame) { return validate_frame(frame).empty(); }

std::vector<double> flatten(const FeatureFrame& frame, const FeatureMask& mask) {
    if (!mask.any()) throw ConfigError("feature mask selects no families");
    const auto violations = validate_frame(frame);
    if (!violations.empty()) {
        std::string msg = "invalid frame:";
        for (const auto& v : violations) msg += " " + v + ";";
        throw ValidationError(msg);
    }
    std::vector<double> out;
    out.reserve(mask.dim());
    if (mask.foot) out.insert(out.end(), frame.foot.begin(), frame.foot.end());
    if (mask.gaze) out.insert(out.end(), frame.gaze.begin(), frame.gaze.end());
    if (mask.hand) {
        out.insert(out.end(), frame.hand_left.begin(), frame.hand_left.end());
        out.insert(out.end(), frame.hand_right.begin(), frame.hand_right.end());
    }
    if (mask.stereo) out.insert(out.end(), frame.stereo.begin(), frame.stereo.end());
    if (mask.object) {
        out.insert(out.end(), frame.object_left.begin(), frame.object_left.end());
        out.insert(out.end(), frame.object_right.begin(), frame.object_right.end());
    }
    return out;
}

FeatureFrame ingest_frame(FeatureFrame frame, const std::function<void(const std::string&)>& warn) {
    bool renormalized = false;
    const auto fix = [&](auto& v, const char* name) {
        if (std::abs(vector_sum(v) - 1.0) <= kProbSumTolerance) return;
        if (!renormalize(v))
            throw ValidationError(std::string("frame at t=") + format_double(frame.timestamp) + ": " +
                                  name + " sum drifted beyond " + format_double(kRenormalizableDrift));
        renormalized = true;
    };
    fix(frame.foot, "foot");
    fix(frame.gaze, "gaze");
    fix(frame.hand_left, "hand_left");
    fix(frame.hand_right, "hand_right");
    fix(frame.object_left, "object_left");
    fix(frame.object_right, "object_right");
    if (renormalized && warn)
        warn("frame at t=" + format_double(frame.timestamp) + ": probability sums renormalized");
    const auto violations = validate_frame(frame);
    if (!violations.empty()) {
        std::string msg = "rejected frame at t=" + format_double(frame.timestamp) + ":";
        for (const auto& v : violations) msg += " " + v + ";";
        throw ValidationError(msg);
    }
    return frame;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

template <std::size_t N>
json to_json_array(const std::array<double, N>& v) {
    json a = json::array();
    for (double x : v) a.push_back(x);
    return a;
}

template <std::size_t N>
void from_json_array(const json& j, const char* key, std::array<double, N>& out) {
    if (!j.contains(key)) throw DataError(std::string("frame object missing key '") + key + "'");
    const json& a = j.at(key);
    if (!a.is_array() || a.size() != N)
        throw DataError(std::string("frame key '") + key + "' must be an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) out[i] = a[i].get<double>();
}

constexpr const char* kFootNames[kFootDim] = {"away", "on_brake", "on_gas", "hover_brake", "hover_gas"};
constexpr const char* kGazeNames[kGazeDim] = {"front", "speedometer", "rearview", "mirror_l",
                                              "mirror_r", "shoulder", "infotainment", "eyes_down"};
constexpr const char* kHandNames[kHandDim] = {"lap", "air", "hover_wheel", "wheel", "cupholder", "infotainment"};
constexpr const char* kObjectNames[kObjectDim] = {"none", "cellphone", "tablet", "food",
                                                  "beverage", "reading", "other"};

}  // namespace

std::string frame_to_json(const FeatureFrame& frame) {
    json j;
    j["t"] = frame.timestamp;
    j["foot"] = to_json_array(frame.foot);
    j["gaze"] = to_json_array(frame.gaze);
    j["hand_l"] = to_json_array(frame.hand_left);
    j["hand_r"] = to_json_array(frame.hand_right);
    j["stereo"] = to_json_array(frame.stereo);
    j["obj_l"] = to_json_array(frame.object_left);
    j["obj_r"] = to_json_array(frame.object_right);
    return j.dump();
}

FeatureFrame frame_from_json(const std::string& line, const std::function<void(const std::string&)>& warn) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError(std::string("unparsable frame JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("t")) throw DataError("frame JSON must be an object with key 't'");
    FeatureFrame f;
    f.timestamp = j.at("t").get<double>();
    from_json_array(j, "foot", f.foot);
    from_json_array(j, "gaze", f.gaze);
    from_json_array(j, "hand_l", f.hand_left);
    from_json_array(j, "hand_r", f.hand_right);
    from_json_array(j, "stereo", f.stereo);
    from_json_array(j, "obj_l", f.object_left);
    from_json_array(j, "obj_r", f.object_right);
    return ingest_frame(f, warn);
}

std::string frame_csv_header() {
    std::string h = "t";
    for (auto n : kFootNames) h += std::string(",foot_") + n;
    for (auto n : kGazeNames) h += std::string(",gaze_") + n;
    for (auto n : kHandNames) h += std::string(",hand_l_") + n;
    for (auto n : kHandNames) h += std::string(",hand_r_") + n;
    h += ",stereo_l,stereo_r";
    for (auto n : kObjectNames) h += std::string(",obj_l_") + n;
    for (auto n : kObjectNames) h += std::string(",obj_r_") + n;
    return h;
}

std::string frame_to_csv(const FeatureFrame& frame) {
    std::string row = format_double(frame.timestamp);
    const auto append = [&row](const double* v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) row += "," + format_double(v[i]);
    };
    append(frame.foot.data(), kFootDim);
    append(frame.gaze.data(), kGazeDim);
    append(frame.hand_left.data(), kHandDim);
    append(frame.hand_right.data(), kHandDim);
    append(frame.stereo.data(), kStereoDim);
    append(frame.object_left.data(), kObjectDim);
    append(frame.object_right.data(), kObjectDim);
    return row;
}

FeatureFrame frame_from_csv(const std::string& line, const std::function<void(const std::string&)>& warn) {
    std::vector<double> cells;
    cells.reserve(1 + kFullDim);
    std::size_t pos = 0;
    while (pos <= line.size()) {
        const auto comma = line.find(',', pos);
        const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        double v = 0.0;
        const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
            throw DataError("unparsable CSV cell: '" + cell + "'");
        cells.push_back(v);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (cells.size() != 1 + kFullDim)
        throw DataError("frame CSV row has " + std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(1 + kFullDim));
    FeatureFrame f;
    std::size_t k = 0;
    f.timestamp = cells[k++];
    for (auto& x : f.foot) x = cells[k++];
    for (auto& x : f.gaze) x = cells[k++];
    for (auto& x : f.hand_left) x = cells[k++];
    for (auto& x : f.hand_right) x = cells[k++];
    for (auto& x : f.stereo) x = cells[k++];
    for (auto& x : f.object_left) x = cells[k++];
    for (auto& x : f.object_right) x = cells[k++];
    return ingest_frame(f, warn);
}

}  // namespace totkit::features
