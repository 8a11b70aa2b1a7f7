#pragma once

#include <array>

#include "totkit/features.hpp"
#include "totkit/rng.hpp"

namespace totkit::testing {

template <std::size_t N>
std::array<double, N> random_prob_vector(Rng& rng) {
    std::array<double, N> v{};
    double sum = 0.0;
    for (double& x : v) {
        x = rng.uniform(0.05, 1.0);
        sum += x;
    }
    for (double& x : v) x /= sum;
    return v;
}

inline features::FeatureFrame random_valid_frame(Rng& rng, double timestamp = 0.0) {
    features::FeatureFrame f;
    f.timestamp = timestamp;
    f.foot = random_prob_vector<features::kFootDim>(rng);
    f.gaze = random_prob_vector<features::kGazeDim>(rng);
    f.hand_left = random_prob_vector<features::kHandDim>(rng);
    f.hand_right = random_prob_vector<features::kHandDim>(rng);
    f.stereo = {rng.uniform(0.0, 0.8), rng.uniform(0.0, 0.8)};
    f.object_left = random_prob_vector<features::kObjectDim>(rng);
    f.object_right = random_prob_vector<features::kObjectDim>(rng);
    return f;
}

}  // namespace totkit::testing
