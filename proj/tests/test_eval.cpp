#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "totkit/dataset.hpp"
#include "totkit/errors.hpp"
#include "totkit/eval.hpp"

using namespace totkit;
using namespace totkit::eval;
using dataset::Dataset;
using dataset::GeneratorParams;
using features::ActivityClass;
using features::FeatureMask;
using model::ModelConfig;
using model::ModelParams;

namespace {

Dataset tiny_dataset(std::uint64_t seed, std::size_t per_activity = 4) {
    GeneratorParams gp = GeneratorParams::defaults();
    std::array<std::size_t, features::kNumActivities> counts{};
    counts.fill(per_activity);
    Dataset ds = dataset::generate_dataset(counts, gp, seed);
    ds.manifest.splits = dataset::split_dataset(ds.episodes, {0.5, 0.25, 0.25}, seed).splits;
    return ds;
}

ModelConfig tiny_config(const std::string& mask = "GHO") {
    ModelConfig cfg;
    cfg.mask = FeatureMask::parse(mask);
    cfg.embed_dim = 4;
    cfg.hidden_dim = 4;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("compute_mae closed forms") {
    SUBCASE("perfect predictions") {
        const std::vector<Outputs> o{{1.0, 2.0, 3.0}};
        const std::vector<Targets3> t{{1.0, 2.0, 3.0}};
        const MaeSummary m = compute_mae(o, t);
        CHECK(m.e == 0.0);
        CHECK(m.f == 0.0);
        CHECK(m.h == 0.0);
        CHECK(m.tot == 0.0);
    }
    SUBCASE("single sample with a max-rule TOT error") {
        const std::vector<Outputs> o{{0.5, 1.0, 2.0}};
        const std::vector<Targets3> t{{1.0, 1.0, 1.5}};
        const MaeSummary m = compute_mae(o, t);
        CHECK(m.e == 0.5);
        CHECK(m.f == 0.0);
        CHECK(m.h == 0.5);
        CHECK(m.tot == 0.5);  // |max(0.5,1,2) - max(1,1,1.5)|
    }
    SUBCASE("TOT MAE is not a function of the component MAEs") {
        const std::vector<Outputs> o{{1.0, 2.0, 3.0}};
        const std::vector<Targets3> t{{3.0, 2.0, 1.0}};
        const MaeSummary m = compute_mae(o, t);
        CHECK(m.e == 2.0);
        CHECK(m.f == 0.0);
        CHECK(m.h == 2.0);
        CHECK(m.tot == 0.0);  // both maxima are 3
    }
    SUBCASE("empty or misaligned inputs") {
        CHECK_THROWS_AS(compute_mae({}, {}), ConfigError);
        CHECK_THROWS_AS(compute_mae({{1, 1, 1}}, {}), ShapeError);
    }
}

TEST_CASE("compute_mae matches an independent brute-force oracle") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(50);
        std::vector<Outputs> o;
        std::vector<Targets3> t;
        for (std::size_t i = 0; i < n; ++i) {
            o.push_back({rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0)});
            t.push_back({rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0)});
        }
        // brute force: accumulate each |difference| one sample at a time
        double be = 0, bf = 0, bh = 0, btot = 0;
        for (std::size_t i = 0; i < n; ++i) {
            be += std::fabs(o[i].o_e - t[i].t_e);
            bf += std::fabs(o[i].o_f - t[i].t_f);
            bh += std::fabs(o[i].o_h - t[i].t_h);
            const double om = std::fmax(o[i].o_e, std::fmax(o[i].o_f, o[i].o_h));
            const double tm = std::fmax(t[i].t_e, std::fmax(t[i].t_f, t[i].t_h));
            btot += std::fabs(om - tm);
        }
        const MaeSummary m = compute_mae(o, t);
        CHECK(std::abs(m.e - be / n) < 1e-12);
        CHECK(std::abs(m.f - bf / n) < 1e-12);
        CHECK(std::abs(m.h - bh / n) < 1e-12);
        CHECK(std::abs(m.tot - btot / n) < 1e-12);
    }
}

TEST_CASE("per-activity rows aggregate back to the overall MAE") {
    const Dataset ds = tiny_dataset(31);
    ModelConfig cfg = tiny_config();
    const ModelParams zeros = ModelParams::zeros(cfg);
    std::vector<const dataset::Episode*> eps;
    for (const auto& ep : ds.episodes) eps.push_back(&ep);

    const EvalReport report = evaluate_model(cfg, zeros, eps, "zeros", "tiny");
    REQUIRE(!report.per_activity.empty());
    CHECK(report.per_activity.size() == features::kNumActivities);

    std::size_t count_sum = 0;
    double weighted_tot = 0.0, weighted_e = 0.0;
    for (const auto& row : report.per_activity) {
        count_sum += row.count;
        weighted_tot += row.mae.tot * static_cast<double>(row.count);
        weighted_e += row.mae.e * static_cast<double>(row.count);
    }
    CHECK(count_sum == report.overall.count);
    CHECK(std::abs(weighted_tot / count_sum - report.overall.tot) < 1e-9);
    CHECK(std::abs(weighted_e / count_sum - report.overall.e) < 1e-9);
}

TEST_CASE("a single-activity subset yields exactly one row") {
    const Dataset ds = tiny_dataset(32);
    ModelConfig cfg = tiny_config();
    const ModelParams zeros = ModelParams::zeros(cfg);
    std::vector<const dataset::Episode*> texting;
    for (const auto& ep : ds.episodes)
        if (ep.activity == ActivityClass::kTexting) texting.push_back(&ep);
    REQUIRE(!texting.empty());
    const EvalReport report = evaluate_model(cfg, zeros, texting);
    REQUIRE(report.per_activity.size() == 1);
    CHECK(report.per_activity[0].activity == ActivityClass::kTexting);
    CHECK(report.per_activity[0].mae.tot == report.overall.tot);
    CHECK(report.per_activity[0].count == texting.size());
}

TEST_CASE("the default ablation spec has the 11 canonical masks") {
    const AblationSpec spec = AblationSpec::defaults();
    REQUIRE(spec.masks.size() == 11);
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.masks.front().to_string() == "F");
    CHECK(spec.masks.back().to_string() == "FGHSO");

    AblationSpec dup = spec;
    dup.masks.push_back(FeatureMask::parse("F"));
    CHECK_THROWS_AS(dup.validate(), ConfigError);
    AblationSpec empty = spec;
    empty.masks.push_back(FeatureMask{});
    CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("ablation reruns with the same seed emit identical tables") {
    const Dataset ds = tiny_dataset(33, 3);
    ModelConfig cfg = tiny_config();
    model::TrainHyper hyper;
    hyper.epochs = 1;
    hyper.batch_size = 8;
    AblationSpec spec;
    spec.masks = {FeatureMask::parse("G"), FeatureMask::parse("HO")};

    const auto rows1 = run_ablation(spec, ds, cfg, hyper, 5);
    const auto rows2 = run_ablation(spec, ds, cfg, hyper, 5);
    REQUIRE(rows1.size() == 2);
    CHECK(ablation_to_csv(rows1) == ablation_to_csv(rows2));
    CHECK(rows1[0].mask.to_string() == "G");
    CHECK(rows1[1].mask.to_string() == "HO");

    const std::string csv = ablation_to_csv(rows1);
    CHECK(csv.find("F,G,H,S,O,mae_eyes_s,mae_foot_s,mae_hands_s,mae_tot_s\n") == 0);
    CHECK(csv.find("0,1,0,0,0,") != std::string::npos);
    CHECK(csv.find("0,0,1,0,1,") != std::string::npos);
}

TEST_CASE("fraction 1.0 equals a plain train+eval run") {
    const Dataset ds = tiny_dataset(34, 3);
    ModelConfig cfg = tiny_config();
    model::TrainHyper hyper;
    hyper.epochs = 1;
    hyper.batch_size = 8;

    const auto rows = data_fraction_experiment(ds, {1.0}, cfg, hyper, 9);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].fraction == 1.0);

    model::TrainHyper direct = hyper;
    direct.seed = 9;
    const auto train_eps = dataset::episodes_in_split(ds, dataset::Split::kTrain);
    const auto val_eps = dataset::episodes_in_split(ds, dataset::Split::kVal);
    const auto test_eps = dataset::episodes_in_split(ds, dataset::Split::kTest);
    const auto result = model::train(cfg, train_eps, val_eps, direct);
    const EvalReport rep = evaluate_model(cfg, result.params, test_eps);
    CHECK(rows[0].test_mae.tot == rep.overall.tot);
    CHECK(rows[0].train_count == train_eps.size());
}

TEST_CASE("fraction bounds and empty-class protection") {
    const Dataset ds = tiny_dataset(35, 3);
    ModelConfig cfg = tiny_config();
    model::TrainHyper hyper;
    hyper.epochs = 1;
    CHECK_THROWS_AS(data_fraction_experiment(ds, {0.0}, cfg, hyper, 1), ConfigError);
    CHECK_THROWS_AS(data_fraction_experiment(ds, {1.5}, cfg, hyper, 1), ConfigError);
    CHECK_THROWS_AS(data_fraction_experiment(ds, {0.01}, cfg, hyper, 1), ConfigError);
}

TEST_CASE("three fractions give three rows in order") {
    const Dataset ds = tiny_dataset(36, 4);
    ModelConfig cfg = tiny_config();
    model::TrainHyper hyper;
    hyper.epochs = 1;
    hyper.batch_size = 16;
    const auto rows = data_fraction_experiment(ds, {0.75, 0.9, 1.0}, cfg, hyper, 4);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].fraction == 0.75);
    CHECK(rows[1].fraction == 0.9);
    CHECK(rows[2].fraction == 1.0);
    CHECK(rows[0].train_count <= rows[1].train_count);
    CHECK(rows[1].train_count <= rows[2].train_count);
    const std::string csv = fractions_to_csv(rows);
    CHECK(csv.find("fraction,train_episodes,") == 0);
}

TEST_CASE("emitted reports are deterministic and well-formed") {
    const Dataset ds = tiny_dataset(37);
    ModelConfig cfg = tiny_config();
    const ModelParams zeros = ModelParams::zeros(cfg);
    std::vector<const dataset::Episode*> eps;
    for (const auto& ep : ds.episodes) eps.push_back(&ep);
    const EvalReport report = evaluate_model(cfg, zeros, eps, "m", "d");

    const std::string prefix = (std::filesystem::temp_directory_path() / "totkit_report").string();

    SUBCASE("csv: 4 data columns and byte-identical reruns") {
        const auto files = emit_report(report, ReportFormat::kCsv, prefix);
        REQUIRE(files.size() == 2);
        const std::string first = slurp(files[0]);
        CHECK(first.find("mae_eyes_s,mae_foot_s,mae_hands_s,mae_tot_s\n") == 0);
        const std::string data_row = first.substr(first.find('\n') + 1);
        std::size_t commas = 0;
        for (char ch : data_row.substr(0, data_row.find('\n'))) commas += ch == ',';
        CHECK(commas == 3);  // 4 columns
        emit_report(report, ReportFormat::kCsv, prefix);
        CHECK(slurp(files[0]) == first);
        CHECK(first.find("not a target") != std::string::npos);
    }
    SUBCASE("svg: one bar group per activity") {
        const auto files = emit_report(report, ReportFormat::kSvg, prefix);
        REQUIRE(files.size() == 1);
        const std::string svg = slurp(files[0]);
        std::size_t groups = 0;
        for (std::size_t pos = svg.find("activity-group"); pos != std::string::npos;
             pos = svg.find("activity-group", pos + 1))
            ++groups;
        CHECK(groups == report.per_activity.size());
        emit_report(report, ReportFormat::kSvg, prefix);
        CHECK(slurp(files[0]) == svg);
    }
    SUBCASE("markdown contains both tables and the reference footer") {
        const auto files = emit_report(report, ReportFormat::kMarkdown, prefix);
        REQUIRE(files.size() == 1);
        const std::string md = slurp(files[0]);
        CHECK(md.find("| Eyes-on-road MAE (s) |") != std::string::npos);
        CHECK(md.find("## Per secondary activity") != std::string::npos);
        CHECK(md.find("not a target") != std::string::npos);
    }
}

TEST_CASE("report JSON round trip") {
    const Dataset ds = tiny_dataset(38);
    ModelConfig cfg = tiny_config();
    const ModelParams zeros = ModelParams::zeros(cfg);
    std::vector<const dataset::Episode*> eps;
    for (const auto& ep : ds.episodes) eps.push_back(&ep);
    const EvalReport report = evaluate_model(cfg, zeros, eps, "m", "d");
    const EvalReport back = report_from_json(report_to_json(report));
    CHECK(back.model_id == report.model_id);
    CHECK(back.overall.tot == report.overall.tot);
    REQUIRE(back.per_activity.size() == report.per_activity.size());
    for (std::size_t i = 0; i < back.per_activity.size(); ++i) {
        CHECK(back.per_activity[i].activity == report.per_activity[i].activity);
        CHECK(back.per_activity[i].mae.tot == report.per_activity[i].mae.tot);
        CHECK(back.per_activity[i].tot_abs_error_sd == report.per_activity[i].tot_abs_error_sd);
    }
}
