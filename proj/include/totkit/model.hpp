#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "totkit/dataset.hpp"
#include "totkit/features.hpp"
#include "totkit/neural.hpp"
#include "totkit/rng.hpp"

namespace totkit::model {

using dataset::Episode;
using features::FeatureMask;
using neural::Mat;
using neural::ParamView;
using neural::Vec;

// Version tag of the frozen flattened-feature layout (family order F, G,
// H-left, H-right, S, O-left, O-right). Checkpoints record it and refuse to
// load anything else.
inline constexpr const char* kFeatureOrderVersion = "FGHSO-lr-1";

enum class Architecture { kIdLstms, kSingleLstm };

const char* architecture_name(Architecture a);
Architecture architecture_from_string(const std::string& s);

// Branch order is fixed: eyes, foot, hands.
inline constexpr std::size_t kNumBranches = 3;

struct ModelConfig {
    FeatureMask mask = FeatureMask::all();
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 64;
    double window_seconds = 2.0;
    double rate_hz = 15.0;
    Architecture arch = Architecture::kIdLstms;

    std::size_t input_dim() const { return mask.dim(); }
    std::size_t window_frames() const {
        return static_cast<std::size_t>(std::lround(window_seconds * rate_hz));
    }

    // window_frames >= 2, dims positive, mask non-empty.
    void validate() const;
};

struct Outputs {
    double o_e = 0.0;
    double o_f = 0.0;
    double o_h = 0.0;

    double tot() const { return std::max(o_e, std::max(o_f, o_h)); }
    double operator[](std::size_t k) const { return k == 0 ? o_e : (k == 1 ? o_f : o_h); }
};

// All weights of one model. The input transform and the output transform are
// single shared instances regardless of architecture; only the LSTM branch
// count differs (three for independent branches, one for the baseline whose
// output transform has three rows instead).
struct ModelParams {
    neural::FcParams input;               // embed_dim x input_dim, tanh
    std::vector<neural::LstmCellParams> branches;
    neural::FcParams output;              // (1 or 3) x hidden_dim, softplus

    static ModelParams init(const ModelConfig& cfg, Rng& rng);
    static ModelParams zeros(const ModelConfig& cfg);

    // Views over every parameter block in canonical layer order (input w/b,
    // branch LSTMs w_x/w_h/b each, output w/b). Checkpoints, Adam and the
    // gradient checker all use this order.
    std::vector<ParamView> param_views();
    std::size_t parameter_count();
};

struct ModelGrads {
    neural::FcGrads input;
    std::vector<neural::LstmGrads> branches;
    neural::FcGrads output;

    explicit ModelGrads(const ModelParams& p);
    void zero();
    std::vector<ParamView> views();
};

// A window is window_frames() flattened feature vectors (oldest first, the
// last one at the TOR frame).
using Window = std::vector<Vec>;

struct Targets3 {
    double t_e = 0.0, t_f = 0.0, t_h = 0.0;
    double operator[](std::size_t k) const { return k == 0 ? t_e : (k == 1 ? t_f : t_h); }
};

struct TrainBatch {
    std::vector<Window> windows;
    std::vector<Targets3> targets;
};

Outputs forward_window(const ModelConfig& cfg, const ModelParams& params, const Window& window);

// Per-timestep variant: outputs[t] uses the hidden state after frame t, so
// the final entry equals the plain forward result.
std::vector<Outputs> forward_window_per_step(const ModelConfig& cfg, const ModelParams& params,
                                             const Window& window);

// Mean L1 over the batch, summed over the three components:
// (1/N) sum|t_e-o_e| + (1/N) sum|t_f-o_f| + (1/N) sum|t_h-o_h|.
double tot_loss(const std::vector<Outputs>& outputs, const std::vector<Targets3>& targets);

// Forward + full backpropagation through time for one batch. Gradients of
// the shared transforms accumulate across branches and timesteps. Returns
// the loss; per-sample outputs optionally reported.
double batch_loss_and_gradients(const ModelConfig& cfg, ModelParams& params, const TrainBatch& batch,
                                ModelGrads& grads, std::vector<Outputs>* outputs = nullptr);

// Central-difference audit of the analytic gradients on `batch`. Targets
// within 10*eps of their output sit on the L1 kink where the loss is not
// differentiable; those targets are nudged away (by 25*eps) before the audit
// so every sampled difference is taken on smooth ground.
// eps must lie in [1e-7, 1e-3]. Returns the max relative error.
double finite_diff_check(const ModelConfig& cfg, ModelParams& params, TrainBatch batch, double eps, Rng& rng,
                         std::size_t max_samples = 200);

struct TrainHyper {
    double lr = 0.001;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;    // mean over batches
    double val_tot_mae = 0.0;
};

struct TrainResult {
    ModelParams params;                // from the best-validation epoch
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
};

// The 2 s of flattened frames ending at (and including) the TOR frame.
Window window_at_tor(const ModelConfig& cfg, const Episode& ep);
TrainBatch batch_from_episodes(const ModelConfig& cfg, const std::vector<const Episode*>& episodes);

// Adam (lr per hyper), shuffled mini-batches, deterministic in (datasets,
// hyper). Keeps the parameters from the epoch with the best validation TOT
// MAE. Throws NumericError with a diagnostic if the loss stops being finite.
TrainResult train(const ModelConfig& cfg, const std::vector<const Episode*>& train_eps,
                  const std::vector<const Episode*>& val_eps, const TrainHyper& hyper);

// Validation-style TOT MAE of a parameter set over episodes.
double evaluate_tot_mae(const ModelConfig& cfg, const ModelParams& params,
                        const std::vector<const Episode*>& episodes);

// --- Checkpoints ---------------------------------------------------------------
// JSON container, magic "TOTKIT-CKPT". Parameter blobs appear in canonical
// layer order; doubles survive the round trip bit-exactly. Loading verifies
// magic, version, feature-order tag, a parameter checksum, and (when the
// caller states one) the expected feature mask.

inline constexpr const char* kCheckpointMagic = "TOTKIT-CKPT";
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& cfg);

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};

Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<FeatureMask>& expected_mask = std::nullopt);

}  // namespace totkit::model
