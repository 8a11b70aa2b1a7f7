#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "totkit/dataset.hpp"
#include "totkit/errors.hpp"
#include "totkit/model.hpp"
#include "test_support.hpp"

using namespace totkit;
using namespace totkit::model;
using dataset::GeneratorParams;
using features::ActivityClass;
using features::FeatureMask;
using testing::random_valid_frame;

namespace {

ModelConfig small_config(const std::string& mask = "GHO", std::size_t embed = 8, std::size_t hidden = 8) {
    ModelConfig cfg;
    cfg.mask = FeatureMask::parse(mask);
    cfg.embed_dim = embed;
    cfg.hidden_dim = hidden;
    cfg.window_seconds = 0.4;  // 6 frames at 15 Hz
    cfg.rate_hz = 15.0;
    return cfg;
}

Window random_window(const ModelConfig& cfg, Rng& rng) {
    Window w;
    for (std::size_t t = 0; t < cfg.window_frames(); ++t)
        w.push_back(features::flatten(random_valid_frame(rng), cfg.mask));
    return w;
}

TrainBatch random_batch(const ModelConfig& cfg, Rng& rng, std::size_t n) {
    TrainBatch b;
    for (std::size_t i = 0; i < n; ++i) {
        b.windows.push_back(random_window(cfg, rng));
        b.targets.push_back(Targets3{rng.uniform(0.3, 5.0), rng.uniform(0.3, 5.0), rng.uniform(0.3, 5.0)});
    }
    return b;
}

std::vector<const dataset::Episode*> as_ptrs(const std::vector<dataset::Episode>& eps) {
    std::vector<const dataset::Episode*> out;
    for (const auto& ep : eps) out.push_back(&ep);
    return out;
}

}  // namespace

TEST_CASE("zero-parameter model outputs softplus(0) on every head") {
    for (const auto arch : {Architecture::kIdLstms, Architecture::kSingleLstm}) {
        ModelConfig cfg = small_config();
        cfg.arch = arch;
        const ModelParams zeros = ModelParams::zeros(cfg);
        Rng rng(1);
        const Window w = random_window(cfg, rng);
        const Outputs o = forward_window(cfg, zeros, w);
        CHECK(o.o_e == neural::softplus(0.0));
        CHECK(o.o_f == neural::softplus(0.0));
        CHECK(o.o_h == neural::softplus(0.0));
        CHECK(std::abs(o.o_e - std::log(2.0)) < 1e-15);
    }
}

TEST_CASE("outputs are nonnegative and finite for random parameters") {
    ModelConfig cfg = small_config();
    Rng rng(2);
    ModelParams params = ModelParams::init(cfg, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const Outputs o = forward_window(cfg, params, random_window(cfg, rng));
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(o[k] >= 0.0);
            CHECK(std::isfinite(o[k]));
        }
    }
}

TEST_CASE("per-timestep outputs end at the plain forward result") {
    ModelConfig cfg = small_config();
    Rng rng(3);
    ModelParams params = ModelParams::init(cfg, rng);
    const Window w = random_window(cfg, rng);
    const auto steps = forward_window_per_step(cfg, params, w);
    REQUIRE(steps.size() == cfg.window_frames());
    const Outputs last = forward_window(cfg, params, w);
    CHECK(steps.back().o_e == last.o_e);
    CHECK(steps.back().o_f == last.o_f);
    CHECK(steps.back().o_h == last.o_h);
}

TEST_CASE("window shape errors") {
    ModelConfig cfg = small_config();
    Rng rng(4);
    ModelParams params = ModelParams::init(cfg, rng);
    Window w = random_window(cfg, rng);
    w.pop_back();
    CHECK_THROWS_AS(forward_window(cfg, params, w), ShapeError);
    w = random_window(cfg, rng);
    w[2].pop_back();
    CHECK_THROWS_AS(forward_window(cfg, params, w), ShapeError);
}

TEST_CASE("tot_loss closed forms") {
    const std::vector<Outputs> o1{{1.0, 1.0, 1.0}};
    const std::vector<Targets3> t1{{2.0, 3.0, 4.0}};
    CHECK(tot_loss(o1, t1) == 6.0);

    const std::vector<Outputs> o2{{1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}};
    const std::vector<Targets3> t2{{2.0, 2.0, 2.0}, {4.0, 4.0, 4.0}};
    CHECK(tot_loss(o2, t2) == 6.0);

    CHECK(tot_loss(o1, {{1.0, 1.0, 1.0}}) == 0.0);
    CHECK_THROWS_AS(tot_loss({}, {}), ConfigError);
    CHECK_THROWS_AS(tot_loss(o2, t1), ShapeError);
}

TEST_CASE("a branch whose head error is zero receives zero gradient") {
    ModelConfig cfg = small_config();
    Rng rng(5);
    ModelParams params = ModelParams::init(cfg, rng);
    TrainBatch batch = random_batch(cfg, rng, 2);
    // Pin the eyes target exactly on the output: L1 subgradient 0.
    for (std::size_t i = 0; i < batch.windows.size(); ++i)
        batch.targets[i].t_e = forward_window(cfg, params, batch.windows[i]).o_e;
    ModelGrads grads(params);
    grads.zero();
    batch_loss_and_gradients(cfg, params, batch, grads);
    for (double g : grads.branches[0].w_x.a) CHECK(g == 0.0);
    for (double g : grads.branches[0].w_h.a) CHECK(g == 0.0);
    for (double g : grads.branches[0].b) CHECK(g == 0.0);
    // the other branches still learn
    double sum = 0.0;
    for (double g : grads.branches[1].w_x.a) sum += std::abs(g);
    CHECK(sum > 0.0);
}

TEST_CASE("analytic gradients match central differences") {
    Rng meta(6);
    for (const auto arch : {Architecture::kIdLstms, Architecture::kSingleLstm}) {
        ModelConfig cfg = small_config("GHO", 8, 8);
        cfg.arch = arch;
        Rng rng(7);
        ModelParams params = ModelParams::init(cfg, rng);
        TrainBatch batch = random_batch(cfg, rng, 3);
        const double err = finite_diff_check(cfg, params, batch, 1e-5, meta, 150);
        CAPTURE(architecture_name(arch));
        CHECK(err < 1e-4);
    }
}

TEST_CASE("finite_diff_check rejects eps outside its band") {
    ModelConfig cfg = small_config();
    Rng rng(8);
    ModelParams params = ModelParams::init(cfg, rng);
    TrainBatch batch = random_batch(cfg, rng, 1);
    CHECK_THROWS_AS(finite_diff_check(cfg, params, batch, 1.0, rng), ConfigError);
}

TEST_CASE("shared-transform gradients are additive across branches") {
    ModelConfig cfg = small_config("GH", 6, 5);
    Rng rng(9);
    ModelParams params = ModelParams::init(cfg, rng);
    TrainBatch batch = random_batch(cfg, rng, 2);

    ModelGrads full(params);
    full.zero();
    batch_loss_and_gradients(cfg, params, batch, full);

    // Split the loss into three single-component losses by pinning the other
    // two targets onto the outputs, then sum the input-transform gradients.
    neural::Mat sum_w(params.input.w.rows, params.input.w.cols);
    std::vector<double> sum_b(params.input.b.size(), 0.0);
    for (std::size_t keep = 0; keep < 3; ++keep) {
        TrainBatch masked = batch;
        for (std::size_t i = 0; i < masked.windows.size(); ++i) {
            const Outputs o = forward_window(cfg, params, masked.windows[i]);
            if (keep != 0) masked.targets[i].t_e = o.o_e;
            if (keep != 1) masked.targets[i].t_f = o.o_f;
            if (keep != 2) masked.targets[i].t_h = o.o_h;
        }
        ModelGrads part(params);
        part.zero();
        batch_loss_and_gradients(cfg, params, masked, part);
        for (std::size_t k = 0; k < sum_w.a.size(); ++k) sum_w.a[k] += part.input.w.a[k];
        for (std::size_t k = 0; k < sum_b.size(); ++k) sum_b[k] += part.input.b[k];
    }
    for (std::size_t k = 0; k < sum_w.a.size(); ++k)
        CHECK(sum_w.a[k] == doctest::Approx(full.input.w.a[k]).epsilon(1e-9));
    for (std::size_t k = 0; k < sum_b.size(); ++k)
        CHECK(sum_b[k] == doctest::Approx(full.input.b[k]).epsilon(1e-9));
}

TEST_CASE("branch independence: only the perturbed branch's output moves") {
    ModelConfig cfg = small_config();
    Rng rng(10);
    ModelParams params = ModelParams::init(cfg, rng);
    const Window w = random_window(cfg, rng);
    const Outputs base = forward_window(cfg, params, w);

    ModelParams poked = params;
    poked.branches[0].w_x(0, 0) += 0.37;
    const Outputs moved = forward_window(cfg, poked, w);
    CHECK(moved.o_e != base.o_e);
    CHECK(moved.o_f == base.o_f);
    CHECK(moved.o_h == base.o_h);
}

TEST_CASE("shared input transform feeds all three outputs") {
    ModelConfig cfg = small_config();
    Rng rng(11);
    ModelParams params = ModelParams::init(cfg, rng);
    const Window w = random_window(cfg, rng);
    const Outputs base = forward_window(cfg, params, w);

    ModelParams poked = params;
    poked.input.w(0, 0) += 0.37;
    const Outputs moved = forward_window(cfg, poked, w);
    CHECK(moved.o_e != base.o_e);
    CHECK(moved.o_f != base.o_f);
    CHECK(moved.o_h != base.o_h);
}

TEST_CASE("training is deterministic and honors the epoch budget") {
    GeneratorParams gp = GeneratorParams::defaults();
    std::vector<dataset::Episode> eps;
    for (std::size_t i = 0; i < 8; ++i) {
        Rng rng = Rng::fork(50, i);
        eps.push_back(dataset::generate_episode(static_cast<ActivityClass>(i % 8), gp, rng,
                                                "tr" + std::to_string(i)));
    }
    const auto ptrs = as_ptrs(eps);
    ModelConfig cfg = small_config("GHO", 6, 6);
    cfg.window_seconds = 2.0;
    TrainHyper hyper;
    hyper.epochs = 3;
    hyper.batch_size = 4;
    hyper.seed = 123;

    const TrainResult a = train(cfg, ptrs, ptrs, hyper);
    const TrainResult b = train(cfg, ptrs, ptrs, hyper);
    REQUIRE(a.history.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(a.history[e].train_loss == b.history[e].train_loss);
        CHECK(a.history[e].val_tot_mae == b.history[e].val_tot_mae);
        CHECK(a.history[e].epoch == e + 1);
    }
    CHECK(a.best_epoch == b.best_epoch);

    // identical parameter bits from the best epoch
    ModelParams pa = a.params, pb = b.params;
    const auto va = pa.param_views(), vb = pb.param_views();
    for (std::size_t blk = 0; blk < va.size(); ++blk)
        for (std::size_t k = 0; k < va[blk].size; ++k) CHECK(va[blk].data[k] == vb[blk].data[k]);
}

TEST_CASE("a tiny model overfits a tiny set") {
    GeneratorParams gp = GeneratorParams::defaults();
    std::vector<dataset::Episode> eps;
    for (std::size_t i = 0; i < 6; ++i) {
        Rng rng = Rng::fork(60, i);
        eps.push_back(dataset::generate_episode(i % 2 ? ActivityClass::kReading : ActivityClass::kAttentive,
                                                gp, rng, "ov" + std::to_string(i)));
    }
    const auto ptrs = as_ptrs(eps);
    ModelConfig cfg = small_config("GHO", 8, 8);
    cfg.window_seconds = 2.0;
    TrainHyper hyper;
    hyper.epochs = 300;
    hyper.batch_size = 3;
    hyper.lr = 0.01;
    hyper.seed = 7;
    const TrainResult r = train(cfg, ptrs, ptrs, hyper);
    CHECK(evaluate_tot_mae(cfg, r.params, ptrs) < 0.3);
    CHECK(r.history.front().val_tot_mae > evaluate_tot_mae(cfg, r.params, ptrs));
}

TEST_CASE("training aborts with a diagnostic when the loss explodes") {
    GeneratorParams gp = GeneratorParams::defaults();
    std::vector<dataset::Episode> eps;
    for (std::size_t i = 0; i < 2; ++i) {
        Rng rng = Rng::fork(70, i);
        eps.push_back(dataset::generate_episode(ActivityClass::kAttentive, gp, rng, "x" + std::to_string(i)));
    }
    auto ptrs = as_ptrs(eps);
    ModelConfig cfg = small_config("G", 4, 4);
    cfg.window_seconds = 2.0;
    TrainHyper hyper;
    hyper.epochs = 2;
    hyper.lr = 1e308;  // first update overflows the weights, second batch sees non-finite activations
    hyper.batch_size = 1;
    try {
        train(cfg, ptrs, ptrs, hyper);
        FAIL("training did not abort");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("a non-finite activation is rejected at the layer boundary") {
    ModelConfig cfg = small_config("G", 4, 4);
    Rng rng(71);
    ModelParams params = ModelParams::init(cfg, rng);
    TrainBatch batch = random_batch(cfg, rng, 1);
    batch.windows[0][2][1] = std::numeric_limits<double>::quiet_NaN();
    ModelGrads grads(params);
    grads.zero();
    CHECK_THROWS_AS(batch_loss_and_gradients(cfg, params, batch, grads), NumericError);
}

TEST_CASE("checkpoint round trip is bit-exact and guarded") {
    ModelConfig cfg = small_config("GHSO", 7, 9);
    Rng rng(12);
    ModelParams params = ModelParams::init(cfg, rng);
    const std::string path =
        (std::filesystem::temp_directory_path() / "totkit_ckpt_test.json").string();
    save_checkpoint(path, params, cfg);

    SUBCASE("round trip") {
        Checkpoint ckpt = load_checkpoint(path);
        CHECK(ckpt.config.mask == cfg.mask);
        CHECK(ckpt.config.embed_dim == cfg.embed_dim);
        CHECK(ckpt.config.hidden_dim == cfg.hidden_dim);
        CHECK(ckpt.config.arch == cfg.arch);
        const auto va = params.param_views(), vb = ckpt.params.param_views();
        REQUIRE(va.size() == vb.size());
        for (std::size_t blk = 0; blk < va.size(); ++blk) {
            REQUIRE(va[blk].size == vb[blk].size);
            for (std::size_t k = 0; k < va[blk].size; ++k) CHECK(va[blk].data[k] == vb[blk].data[k]);
        }
    }
    SUBCASE("mask mismatch fails loudly") {
        CHECK_THROWS_AS(load_checkpoint(path, FeatureMask::parse("H")), PersistenceError);
    }
    SUBCASE("truncated file fails") {
        std::ifstream in(path);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::trunc);
        out << content.substr(0, content.size() / 2);
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path), PersistenceError);
    }
    SUBCASE("wrong magic fails") {
        std::ofstream out(path, std::ios::trunc);
        out << "{\"magic\": \"NOT-A-CKPT\"}";
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path), PersistenceError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("window_at_tor takes the 2 s ending at the TOR frame") {
    GeneratorParams gp = GeneratorParams::defaults();
    Rng rng = Rng::fork(80, 0);
    const dataset::Episode ep = dataset::generate_episode(ActivityClass::kTexting, gp, rng, "w");
    ModelConfig cfg;
    cfg.mask = FeatureMask::all();
    const Window w = window_at_tor(cfg, ep);
    REQUIRE(w.size() == 30);
    CHECK(w.back() == features::flatten(ep.frames[ep.tor_index], cfg.mask));
    CHECK(w.front() == features::flatten(ep.frames[ep.tor_index - 29], cfg.mask));

    ModelConfig wrong = cfg;
    wrong.rate_hz = 30.0;
    CHECK_THROWS_AS(window_at_tor(wrong, ep), ConfigError);
}

TEST_CASE("model config validation") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.mask = FeatureMask{};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.window_seconds = 0.05;  // < 2 frames at 15 Hz
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.hidden_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
