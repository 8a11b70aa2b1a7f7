#include "totkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "totkit/errors.hpp"

namespace totkit::model {

using nlohmann::json;

const char* architecture_name(Architecture a) {
    switch (a) {
        case Architecture::kIdLstms: return "id-lstms";
        case Architecture::kSingleLstm: return "single-lstm";
    }
    throw ConfigError("unknown architecture value");
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "id-lstms") return Architecture::kIdLstms;
    if (s == "single-lstm") return Architecture::kSingleLstm;
    throw ConfigError("unknown architecture: " + s);
}

void ModelConfig::validate() const {
    if (!mask.any()) throw ConfigError("model feature mask selects no families");
    if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("model dims must be positive");
    if (rate_hz <= 0.0) throw ConfigError("rate must be positive");
    if (window_frames() < 2) throw ConfigError("window must cover at least 2 frames");
}

namespace {

std::size_t branch_count(Architecture a) { return a == Architecture::kIdLstms ? kNumBranches : 1; }
std::size_t output_rows(Architecture a) { return a == Architecture::kIdLstms ? 1 : kNumBranches; }

ModelParams make_shaped(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.input = neural::FcParams(cfg.embed_dim, cfg.input_dim(), neural::Activation::kTanh);
    p.branches.assign(branch_count(cfg.arch), neural::LstmCellParams(cfg.embed_dim, cfg.hidden_dim));
    p.output = neural::FcParams(output_rows(cfg.arch), cfg.hidden_dim, neural::Activation::kSoftplus);
    return p;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
    ModelParams p = make_shaped(cfg);
    p.input.init(rng);
    for (auto& b : p.branches) b.init(rng);
    p.output.init(rng);
    return p;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) { return make_shaped(cfg); }

std::vector<ParamView> ModelParams::param_views() {
    std::vector<ParamView> v;
    v.push_back({input.w.a.data(), input.w.a.size()});
    v.push_back({input.b.data(), input.b.size()});
    for (auto& br : branches) {
        v.push_back({br.w_x.a.data(), br.w_x.a.size()});
        v.push_back({br.w_h.a.data(), br.w_h.a.size()});
        v.push_back({br.b.data(), br.b.size()});
    }
    v.push_back({output.w.a.data(), output.w.a.size()});
    v.push_back({output.b.data(), output.b.size()});
    return v;
}

std::size_t ModelParams::parameter_count() { return neural::total_size(param_views()); }

ModelGrads::ModelGrads(const ModelParams& p) : input(p.input), output(p.output) {
    branches.reserve(p.branches.size());
    for (const auto& b : p.branches) branches.emplace_back(b);
}

void ModelGrads::zero() {
    input.zero();
    for (auto& b : branches) b.zero();
    output.zero();
}

std::vector<ParamView> ModelGrads::views() {
    std::vector<ParamView> v;
    v.push_back({input.w.a.data(), input.w.a.size()});
    v.push_back({input.b.data(), input.b.size()});
    for (auto& br : branches) {
        v.push_back({br.w_x.a.data(), br.w_x.a.size()});
        v.push_back({br.w_h.a.data(), br.w_h.a.size()});
        v.push_back({br.b.data(), br.b.size()});
    }
    v.push_back({output.w.a.data(), output.w.a.size()});
    v.push_back({output.b.data(), output.b.size()});
    return v;
}

namespace {

void check_window(const ModelConfig& cfg, const Window& window) {
    if (window.size() != cfg.window_frames())
        throw ShapeError("window has " + std::to_string(window.size()) + " frames, expected " +
                         std::to_string(cfg.window_frames()));
    for (const auto& x : window)
        if (x.size() != cfg.input_dim())
            throw ShapeError("window frame has dim " + std::to_string(x.size()) + ", expected " +
                             std::to_string(cfg.input_dim()));
}

Outputs head_outputs(const ModelConfig& cfg, const ModelParams& params, const std::vector<Vec>& final_h) {
    if (cfg.arch == Architecture::kIdLstms) {
        Outputs out;
        out.o_e = neural::fc_forward(params.output, final_h[0])[0];
        out.o_f = neural::fc_forward(params.output, final_h[1])[0];
        out.o_h = neural::fc_forward(params.output, final_h[2])[0];
        return out;
    }
    const Vec y = neural::fc_forward(params.output, final_h[0]);
    return Outputs{y[0], y[1], y[2]};
}

}  // namespace

Outputs forward_window(const ModelConfig& cfg, const ModelParams& params, const Window& window) {
    check_window(cfg, window);
    const std::size_t nb = params.branches.size();
    std::vector<Vec> h(nb, Vec(cfg.hidden_dim, 0.0));
    std::vector<Vec> c(nb, Vec(cfg.hidden_dim, 0.0));
    Vec h_next, c_next;
    for (const auto& x : window) {
        const Vec e = neural::fc_forward(params.input, x);
        for (std::size_t b = 0; b < nb; ++b) {
            neural::lstm_step(params.branches[b], e, h[b], c[b], h_next, c_next);
            h[b].swap(h_next);
            c[b].swap(c_next);
        }
    }
    return head_outputs(cfg, params, h);
}

std::vector<Outputs> forward_window_per_step(const ModelConfig& cfg, const ModelParams& params,
                                             const Window& window) {
    check_window(cfg, window);
    const std::size_t nb = params.branches.size();
    std::vector<Vec> h(nb, Vec(cfg.hidden_dim, 0.0));
    std::vector<Vec> c(nb, Vec(cfg.hidden_dim, 0.0));
    Vec h_next, c_next;
    std::vector<Outputs> out;
    out.reserve(window.size());
    for (const auto& x : window) {
        const Vec e = neural::fc_forward(params.input, x);
        for (std::size_t b = 0; b < nb; ++b) {
            neural::lstm_step(params.branches[b], e, h[b], c[b], h_next, c_next);
            h[b].swap(h_next);
            c[b].swap(c_next);
        }
        out.push_back(head_outputs(cfg, params, h));
    }
    return out;
}

double tot_loss(const std::vector<Outputs>& outputs, const std::vector<Targets3>& targets) {
    if (outputs.empty()) throw ConfigError("empty batch");
    if (outputs.size() != targets.size())
        throw ShapeError("outputs/targets batch sizes differ: " + std::to_string(outputs.size()) + " vs " +
                         std::to_string(targets.size()));
    const double n = static_cast<double>(outputs.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) loss += std::abs(targets[i][k] - outputs[i][k]) / n;
    return loss;
}

namespace {

double l1_sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Cached forward state for one sample.
struct SampleTape {
    std::vector<Vec> embed;                                  // T x embed_dim
    std::vector<std::vector<neural::LstmStepCache>> steps;   // branch x T
    Outputs outputs;
};

SampleTape forward_cached(const ModelConfig& cfg, const ModelParams& params, const Window& window) {
    check_window(cfg, window);
    const std::size_t nb = params.branches.size();
    const std::size_t T = window.size();
    SampleTape tape;
    tape.embed.reserve(T);
    tape.steps.assign(nb, {});
    for (auto& s : tape.steps) s.reserve(T);
    const Vec zero_h(cfg.hidden_dim, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        tape.embed.push_back(neural::fc_forward(params.input, window[t]));
        for (std::size_t b = 0; b < nb; ++b) {
            const Vec& h_prev = t == 0 ? zero_h : tape.steps[b][t - 1].h;
            const Vec& c_prev = t == 0 ? zero_h : tape.steps[b][t - 1].c;
            tape.steps[b].push_back(neural::lstm_step_cached(params.branches[b], tape.embed[t], h_prev, c_prev));
        }
    }
    std::vector<Vec> final_h;
    final_h.reserve(nb);
    for (std::size_t b = 0; b < nb; ++b) final_h.push_back(tape.steps[b][T - 1].h);
    tape.outputs = head_outputs(cfg, params, final_h);
    return tape;
}

}  // namespace

double batch_loss_and_gradients(const ModelConfig& cfg, ModelParams& params, const TrainBatch& batch,
                                ModelGrads& grads, std::vector<Outputs>* outputs) {
    if (batch.windows.empty()) throw ConfigError("empty batch");
    if (batch.windows.size() != batch.targets.size())
        throw ShapeError("batch windows/targets sizes differ");
    const std::size_t N = batch.windows.size();
    const std::size_t nb = params.branches.size();
    const double inv_n = 1.0 / static_cast<double>(N);
    const Vec zero_h(cfg.hidden_dim, 0.0);

    double loss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const Window& window = batch.windows[i];
        const Targets3& target = batch.targets[i];
        SampleTape tape = forward_cached(cfg, params, window);
        if (outputs) outputs->push_back(tape.outputs);
        for (std::size_t k = 0; k < 3; ++k) loss += std::abs(target[k] - tape.outputs[k]) * inv_n;

        const std::size_t T = window.size();
        // dL/do_k, already carrying the 1/N batch normalization.
        const double d_out[3] = {l1_sign(tape.outputs.o_e - target.t_e) * inv_n,
                                 l1_sign(tape.outputs.o_f - target.t_f) * inv_n,
                                 l1_sign(tape.outputs.o_h - target.t_h) * inv_n};

        // Head -> gradient w.r.t. each branch's final hidden state.
        std::vector<Vec> dh_final(nb);
        if (cfg.arch == Architecture::kIdLstms) {
            for (std::size_t b = 0; b < nb; ++b) {
                const Vec y{tape.outputs[b]};
                const Vec dy{d_out[b]};
                dh_final[b] = neural::fc_backward(params.output, tape.steps[b][T - 1].h, y, dy, grads.output);
            }
        } else {
            const Vec y{tape.outputs.o_e, tape.outputs.o_f, tape.outputs.o_h};
            const Vec dy{d_out[0], d_out[1], d_out[2]};
            dh_final[0] = neural::fc_backward(params.output, tape.steps[0][T - 1].h, y, dy, grads.output);
        }

        // BPTT per branch; the shared embedding collects dx from every branch.
        std::vector<Vec> d_embed(T, Vec(cfg.embed_dim, 0.0));
        Vec dx, dh_prev, dc_prev;
        for (std::size_t b = 0; b < nb; ++b) {
            Vec dh = dh_final[b];
            Vec dc(cfg.hidden_dim, 0.0);
            for (std::size_t t = T; t-- > 0;) {
                const Vec& h_prev = t == 0 ? zero_h : tape.steps[b][t - 1].h;
                const Vec& c_prev = t == 0 ? zero_h : tape.steps[b][t - 1].c;
                neural::lstm_step_backward(params.branches[b], tape.steps[b][t], tape.embed[t], h_prev, c_prev,
                                           dh, dc, grads.branches[b], dx, dh_prev, dc_prev);
                for (std::size_t j = 0; j < cfg.embed_dim; ++j) d_embed[t][j] += dx[j];
                dh.swap(dh_prev);
                dc.swap(dc_prev);
            }
        }

        // Shared input transform accumulates over all timesteps.
        for (std::size_t t = 0; t < T; ++t)
            neural::fc_backward(params.input, window[t], tape.embed[t], d_embed[t], grads.input);
    }
    if (!std::isfinite(loss)) throw NumericError("batch loss is not finite");
    return loss;
}

namespace {

double batch_loss_only(const ModelConfig& cfg, const ModelParams& params, const TrainBatch& batch) {
    std::vector<Outputs> outputs;
    outputs.reserve(batch.windows.size());
    for (const auto& w : batch.windows) outputs.push_back(forward_window(cfg, params, w));
    std::vector<Targets3> targets = batch.targets;
    return tot_loss(outputs, targets);
}

}  // namespace

double finite_diff_check(const ModelConfig& cfg, ModelParams& params, TrainBatch batch, double eps, Rng& rng,
                         std::size_t max_samples) {
    if (eps < 1e-7 || eps > 1e-3) throw ConfigError("finite-difference eps must be in [1e-7, 1e-3]");
    // Move any target off the L1 kink so central differences see a smooth loss.
    for (std::size_t i = 0; i < batch.windows.size(); ++i) {
        const Outputs o = forward_window(cfg, params, batch.windows[i]);
        auto& t = batch.targets[i];
        for (std::size_t k = 0; k < 3; ++k) {
            const double out = o[k];
            double* tk = k == 0 ? &t.t_e : (k == 1 ? &t.t_f : &t.t_h);
            if (std::abs(out - *tk) < 10.0 * eps) *tk = out + 25.0 * eps;
        }
    }
    ModelGrads grads(params);
    grads.zero();
    batch_loss_and_gradients(cfg, params, batch, grads);
    const auto loss_fn = [&]() { return batch_loss_only(cfg, params, batch); };
    return neural::finite_diff_max_rel_error(params.param_views(), grads.views(), loss_fn, eps, rng, max_samples);
}

Window window_at_tor(const ModelConfig& cfg, const Episode& ep) {
    if (std::abs(ep.rate_hz - cfg.rate_hz) > 1e-9)
        throw ConfigError("episode rate " + features::format_double(ep.rate_hz) +
                          " does not match model rate " + features::format_double(cfg.rate_hz));
    const std::size_t wf = cfg.window_frames();
    if (ep.tor_index + 1 < wf)
        throw DataError("episode " + ep.id + " lacks " + std::to_string(wf) + " frames of pre-TOR context");
    Window w;
    w.reserve(wf);
    for (std::size_t i = ep.tor_index + 1 - wf; i <= ep.tor_index; ++i)
        w.push_back(features::flatten(ep.frames[i], cfg.mask));
    return w;
}

TrainBatch batch_from_episodes(const ModelConfig& cfg, const std::vector<const Episode*>& episodes) {
    TrainBatch batch;
    batch.windows.reserve(episodes.size());
    batch.targets.reserve(episodes.size());
    for (const Episode* ep : episodes) {
        if (!ep->targets) throw DataError("episode " + ep->id + " has no targets");
        batch.windows.push_back(window_at_tor(cfg, *ep));
        batch.targets.push_back(Targets3{ep->targets->t_e, ep->targets->t_f, ep->targets->t_h});
    }
    return batch;
}

double evaluate_tot_mae(const ModelConfig& cfg, const ModelParams& params,
                        const std::vector<const Episode*>& episodes) {
    if (episodes.empty()) throw ConfigError("cannot evaluate on an empty set");
    double acc = 0.0;
    for (const Episode* ep : episodes) {
        if (!ep->targets) throw DataError("episode " + ep->id + " has no targets");
        const Outputs o = forward_window(cfg, params, window_at_tor(cfg, *ep));
        acc += std::abs(o.tot() - ep->targets->tot());
    }
    return acc / static_cast<double>(episodes.size());
}

TrainResult train(const ModelConfig& cfg, const std::vector<const Episode*>& train_eps,
                  const std::vector<const Episode*>& val_eps, const TrainHyper& hyper) {
    cfg.validate();
    if (train_eps.empty() || val_eps.empty()) throw ConfigError("train and validation sets must be non-empty");
    if (hyper.epochs == 0 || hyper.batch_size == 0) throw ConfigError("epochs and batch size must be positive");

    const TrainBatch all = batch_from_episodes(cfg, train_eps);
    Rng rng(hyper.seed);
    ModelParams params = ModelParams::init(cfg, rng);
    ModelGrads grads(params);
    neural::AdamState adam(params.param_views(), neural::AdamHyper{hyper.lr, 0.9, 0.999, 1e-8});

    std::vector<std::size_t> order(all.windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    double best_mae = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(start + hyper.batch_size, order.size());
            TrainBatch batch;
            batch.windows.reserve(end - start);
            batch.targets.reserve(end - start);
            for (std::size_t j = start; j < end; ++j) {
                batch.windows.push_back(all.windows[order[j]]);
                batch.targets.push_back(all.targets[order[j]]);
            }
            grads.zero();
            double loss;
            try {
                loss = batch_loss_and_gradients(cfg, params, batch, grads);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + ": " + e.what());
            }
            adam.step(params.param_views(), grads.views());
            loss_sum += loss;
            ++batches;
        }
        const double val_mae = evaluate_tot_mae(cfg, params, val_eps);
        result.history.push_back({epoch, loss_sum / static_cast<double>(batches), val_mae});
        if (val_mae < best_mae) {
            best_mae = val_mae;
            result.params = params;
            result.best_epoch = epoch;
        }
    }
    return result;
}

// --- Checkpoints -----------------------------------------------------------------

namespace {

struct NamedBlock {
    std::string name;
    const Vec* data;
};

std::vector<NamedBlock> named_blocks(const ModelParams& p) {
    std::vector<NamedBlock> blocks;
    blocks.push_back({"input.w", &p.input.w.a});
    blocks.push_back({"input.b", &p.input.b});
    for (std::size_t b = 0; b < p.branches.size(); ++b) {
        const std::string base = "branch" + std::to_string(b);
        blocks.push_back({base + ".w_x", &p.branches[b].w_x.a});
        blocks.push_back({base + ".w_h", &p.branches[b].w_h.a});
        blocks.push_back({base + ".b", &p.branches[b].b});
    }
    blocks.push_back({"output.w", &p.output.w.a});
    blocks.push_back({"output.b", &p.output.b});
    return blocks;
}

std::uint64_t fnv1a_of_params(const std::vector<NamedBlock>& blocks) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& blk : blocks) {
        for (const double value : *blk.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &value, sizeof(bits));
            for (int byte = 0; byte < 8; ++byte) {
                h ^= (bits >> (8 * byte)) & 0xff;
                h *= 0x100000001b3ull;
            }
        }
    }
    return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& cfg) {
    json j;
    j["magic"] = kCheckpointMagic;
    j["version"] = kCheckpointVersion;
    j["feature_order"] = kFeatureOrderVersion;
    j["config"] = {{"mask", cfg.mask.to_string()},
                   {"embed_dim", cfg.embed_dim},
                   {"hidden_dim", cfg.hidden_dim},
                   {"window_seconds", cfg.window_seconds},
                   {"rate_hz", cfg.rate_hz},
                   {"arch", architecture_name(cfg.arch)},
                   {"lstm_variant", "single-layer-no-peephole"}};
    const auto blocks = named_blocks(params);
    json jblocks = json::array();
    for (const auto& blk : blocks) {
        json b;
        b["name"] = blk.name;
        b["data"] = *blk.data;
        jblocks.push_back(std::move(b));
    }
    j["blocks"] = std::move(jblocks);
    j["checksum"] = fnv1a_of_params(blocks);
    std::ofstream out(path);
    if (!out) throw PersistenceError("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
    if (!out) throw PersistenceError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<FeatureMask>& expected_mask) {
    std::ifstream in(path);
    if (!in) throw PersistenceError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw PersistenceError("corrupt checkpoint " + path + ": " + e.what());
    }
    if (!j.contains("magic") || j.at("magic").get<std::string>() != kCheckpointMagic)
        throw PersistenceError("not a TOTKIT-CKPT file: " + path);
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw PersistenceError("unsupported checkpoint version in " + path);
    if (j.at("feature_order").get<std::string>() != kFeatureOrderVersion)
        throw PersistenceError("checkpoint uses a different feature ordering: " + path);

    const json& c = j.at("config");
    Checkpoint ckpt;
    ckpt.config.mask = FeatureMask::parse(c.at("mask").get<std::string>());
    ckpt.config.embed_dim = c.at("embed_dim").get<std::size_t>();
    ckpt.config.hidden_dim = c.at("hidden_dim").get<std::size_t>();
    ckpt.config.window_seconds = c.at("window_seconds").get<double>();
    ckpt.config.rate_hz = c.at("rate_hz").get<double>();
    ckpt.config.arch = architecture_from_string(c.at("arch").get<std::string>());
    if (expected_mask && !(*expected_mask == ckpt.config.mask))
        throw PersistenceError("checkpoint feature mask " + ckpt.config.mask.to_string() +
                               " does not match expected mask " + expected_mask->to_string());

    ckpt.params = ModelParams::zeros(ckpt.config);
    const auto blocks = named_blocks(ckpt.params);
    const json& jblocks = j.at("blocks");
    if (!jblocks.is_array() || jblocks.size() != blocks.size())
        throw PersistenceError("checkpoint block count mismatch in " + path);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const json& b = jblocks[i];
        if (b.at("name").get<std::string>() != blocks[i].name)
            throw PersistenceError("checkpoint block order mismatch at '" + b.at("name").get<std::string>() +
                                   "' in " + path);
        const json& data = b.at("data");
        // named_blocks views are const; the params object itself is ours.
        Vec& dst = const_cast<Vec&>(*blocks[i].data);
        if (!data.is_array() || data.size() != dst.size())
            throw PersistenceError("checkpoint block '" + blocks[i].name + "' has wrong size in " + path);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = data[k].get<double>();
    }
    if (j.at("checksum").get<std::uint64_t>() != fnv1a_of_params(blocks))
        throw PersistenceError("checkpoint checksum mismatch: " + path);
    return ckpt;
}

}  // namespace totkit::model
