#include "totkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include <json.hpp>

#include "totkit/errors.hpp"

namespace totkit::eval {

using features::format_double;
using nlohmann::json;

MaeSummary compute_mae(const std::vector<Outputs>& predictions, const std::vector<Targets3>& targets) {
    if (predictions.empty()) throw ConfigError("compute_mae: empty input");
    if (predictions.size() != targets.size())
        throw ShapeError("compute_mae: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
    MaeSummary m;
    m.count = predictions.size();
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const Outputs& o = predictions[i];
        const Targets3& t = targets[i];
        m.e += std::abs(o.o_e - t.t_e);
        m.f += std::abs(o.o_f - t.t_f);
        m.h += std::abs(o.o_h - t.t_h);
        const double target_tot = std::max(t.t_e, std::max(t.t_f, t.t_h));
        m.tot += std::abs(o.tot() - target_tot);
    }
    const double n = static_cast<double>(m.count);
    m.e /= n;
    m.f /= n;
    m.h /= n;
    m.tot /= n;
    return m;
}

EvalReport evaluate_model(const ModelConfig& cfg, const ModelParams& params,
                          const std::vector<const Episode*>& episodes, const std::string& model_id,
                          const std::string& dataset_id) {
    if (episodes.empty()) throw ConfigError("cannot evaluate on an empty set");
    EvalReport report;
    report.model_id = model_id;
    report.dataset_id = dataset_id;

    std::vector<Outputs> all_out;
    std::vector<Targets3> all_tgt;
    all_out.reserve(episodes.size());
    all_tgt.reserve(episodes.size());
    std::map<int, std::pair<std::vector<Outputs>, std::vector<Targets3>>> by_activity;
    for (const Episode* ep : episodes) {
        if (!ep->targets) throw DataError("episode " + ep->id + " has no targets");
        const Outputs o = model::forward_window(cfg, params, model::window_at_tor(cfg, *ep));
        const Targets3 t{ep->targets->t_e, ep->targets->t_f, ep->targets->t_h};
        all_out.push_back(o);
        all_tgt.push_back(t);
        if (ep->activity) {
            auto& bucket = by_activity[static_cast<int>(*ep->activity)];
            bucket.first.push_back(o);
            bucket.second.push_back(t);
        }
    }
    report.overall = compute_mae(all_out, all_tgt);

    for (const auto& [code, bucket] : by_activity) {
        ActivityRow row;
        row.activity = features::activity_from_code(code);
        row.count = bucket.first.size();
        row.mae = compute_mae(bucket.first, bucket.second);
        double mean_tot = 0.0;
        for (const auto& t : bucket.second) mean_tot += std::max(t.t_e, std::max(t.t_f, t.t_h));
        row.mean_tot_target = mean_tot / static_cast<double>(row.count);
        // Population SD of the per-sample absolute TOT errors.
        double var = 0.0;
        for (std::size_t i = 0; i < bucket.first.size(); ++i) {
            const double target_tot =
                std::max(bucket.second[i].t_e, std::max(bucket.second[i].t_f, bucket.second[i].t_h));
            const double err = std::abs(bucket.first[i].tot() - target_tot);
            var += (err - row.mae.tot) * (err - row.mae.tot);
        }
        row.tot_abs_error_sd = std::sqrt(var / static_cast<double>(row.count));
        report.per_activity.push_back(row);
    }
    return report;
}

// --- Ablation ---------------------------------------------------------------------

AblationSpec AblationSpec::defaults() {
    const auto m = [](const char* s) { return FeatureMask::parse(s); };
    AblationSpec spec;
    spec.masks = {m("F"),   m("G"),    m("H"),    m("HS"),   m("HO"),   m("HSO"),
                  m("GHO"), m("GHSO"), m("FGHS"), m("FGHO"), m("FGHSO")};
    return spec;
}

void AblationSpec::validate() const {
    if (masks.empty()) throw ConfigError("ablation requires at least one mask");
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (!masks[i].any()) throw ConfigError("ablation mask " + std::to_string(i) + " is empty");
        for (std::size_t j = i + 1; j < masks.size(); ++j)
            if (masks[i] == masks[j])
                throw ConfigError("duplicate ablation mask: " + masks[i].to_string());
    }
}

std::vector<AblationRow> run_ablation(const AblationSpec& spec, const Dataset& ds, const ModelConfig& base_cfg,
                                      const TrainHyper& hyper, std::uint64_t seed) {
    spec.validate();
    const auto train_eps = dataset::episodes_in_split(ds, dataset::Split::kTrain);
    const auto val_eps = dataset::episodes_in_split(ds, dataset::Split::kVal);
    if (train_eps.empty() || val_eps.empty())
        throw ConfigError("ablation needs non-empty train and validation splits");

    const auto run_one = [&](const FeatureMask& mask) -> AblationRow {
        ModelConfig cfg = base_cfg;
        cfg.mask = mask;
        cfg.validate();
        TrainHyper h = hyper;
        h.seed = seed;  // identical seed for every mask
        model::TrainResult result;
        try {
            result = model::train(cfg, train_eps, val_eps, h);
        } catch (const Error& e) {
            throw NumericError("ablation run for mask " + mask.to_string() + " failed: " + e.what());
        }
        const EvalReport rep = evaluate_model(cfg, result.params, val_eps);
        return AblationRow{mask, rep.overall};
    };

    std::vector<std::future<AblationRow>> futures;
    futures.reserve(spec.masks.size());
    for (const auto& mask : spec.masks)
        futures.push_back(std::async(std::launch::async, run_one, mask));
    std::vector<AblationRow> rows;
    rows.reserve(spec.masks.size());
    for (auto& f : futures) rows.push_back(f.get());
    return rows;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
    std::string out = "F,G,H,S,O,mae_eyes_s,mae_foot_s,mae_hands_s,mae_tot_s\n";
    for (const auto& row : rows) {
        out += row.mask.foot ? "1," : "0,";
        out += row.mask.gaze ? "1," : "0,";
        out += row.mask.hand ? "1," : "0,";
        out += row.mask.stereo ? "1," : "0,";
        out += row.mask.object ? "1," : "0,";
        out += format_double(row.val_mae.e) + "," + format_double(row.val_mae.f) + "," +
               format_double(row.val_mae.h) + "," + format_double(row.val_mae.tot) + "\n";
    }
    return out;
}

// --- Data-fraction experiment --------------------------------------------------------

std::vector<FractionRow> data_fraction_experiment(const Dataset& ds, const std::vector<double>& fractions,
                                                  const ModelConfig& base_cfg, const TrainHyper& hyper,
                                                  std::uint64_t seed) {
    for (const double f : fractions)
        if (!(f > 0.0) || f > 1.0) throw ConfigError("fractions must lie in (0, 1]");
    const auto train_eps = dataset::episodes_in_split(ds, dataset::Split::kTrain);
    const auto val_eps = dataset::episodes_in_split(ds, dataset::Split::kVal);
    const auto test_eps = dataset::episodes_in_split(ds, dataset::Split::kTest);
    if (train_eps.empty() || val_eps.empty() || test_eps.empty())
        throw ConfigError("data-fraction experiment needs non-empty train/val/test splits");

    std::map<int, std::vector<const Episode*>> by_activity;
    for (const Episode* ep : train_eps)
        by_activity[ep->activity ? static_cast<int>(*ep->activity) : -1].push_back(ep);

    const auto run_one = [&](std::size_t index) -> FractionRow {
        const double fraction = fractions[index];
        std::vector<const Episode*> subset;
        if (fraction == 1.0) {
            subset = train_eps;
        } else {
            Rng rng = Rng::fork(seed, index);
            for (const auto& [code, group] : by_activity) {
                const auto take = static_cast<std::size_t>(
                    std::lround(fraction * static_cast<double>(group.size())));
                if (take == 0)
                    throw ConfigError("fraction " + format_double(fraction) + " empties activity class " +
                                      std::to_string(code));
                std::vector<const Episode*> shuffled = group;
                rng.shuffle(shuffled);
                subset.insert(subset.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(take));
            }
        }
        TrainHyper h = hyper;
        h.seed = seed;
        ModelConfig cfg = base_cfg;
        cfg.validate();
        const model::TrainResult result = model::train(cfg, subset, val_eps, h);
        const EvalReport rep = evaluate_model(cfg, result.params, test_eps);
        return FractionRow{fraction, subset.size(), rep.overall};
    };

    std::vector<std::future<FractionRow>> futures;
    futures.reserve(fractions.size());
    for (std::size_t i = 0; i < fractions.size(); ++i)
        futures.push_back(std::async(std::launch::async, run_one, i));
    std::vector<FractionRow> rows;
    rows.reserve(fractions.size());
    for (auto& f : futures) rows.push_back(f.get());
    return rows;
}

std::string fractions_to_csv(const std::vector<FractionRow>& rows) {
    std::string out = "fraction,train_episodes,mae_eyes_s,mae_foot_s,mae_hands_s,mae_tot_s\n";
    for (const auto& row : rows)
        out += format_double(row.fraction) + "," + std::to_string(row.train_count) + "," +
               format_double(row.test_mae.e) + "," + format_double(row.test_mae.f) + "," +
               format_double(row.test_mae.h) + "," + format_double(row.test_mae.tot) + "\n";
    return out;
}

// --- Rendering -------------------------------------------------------------------------

ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::kCsv;
    if (s == "svg") return ReportFormat::kSvg;
    if (s == "markdown" || s == "md") return ReportFormat::kMarkdown;
    throw ConfigError("unknown report format: " + s);
}

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PersistenceError("cannot write " + path);
    out << content;
    if (!out) throw PersistenceError("write failed for " + path);
}

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string overall_csv(const EvalReport& r) {
    std::string out = "mae_eyes_s,mae_foot_s,mae_hands_s,mae_tot_s\n";
    out += format_double(r.overall.e) + "," + format_double(r.overall.f) + "," + format_double(r.overall.h) +
           "," + format_double(r.overall.tot) + "\n";
    out += std::string("# samples = ") + std::to_string(r.overall.count) + "\n";
    out += std::string("# ") + kReferenceFooter + "\n";
    return out;
}

std::string per_activity_csv(const EvalReport& r) {
    std::string out =
        "activity,count,mae_eyes_s,mae_foot_s,mae_hands_s,mae_tot_s,tot_abs_error_sd_s,mean_tot_target_s\n";
    for (const auto& row : r.per_activity) {
        out += std::string(features::activity_name(row.activity)) + "," + std::to_string(row.count) + "," +
               format_double(row.mae.e) + "," + format_double(row.mae.f) + "," + format_double(row.mae.h) +
               "," + format_double(row.mae.tot) + "," + format_double(row.tot_abs_error_sd) + "," +
               format_double(row.mean_tot_target) + "\n";
    }
    out += std::string("# ") + kReferenceFooter + "\n";
    return out;
}

std::string per_activity_svg(const EvalReport& r) {
    // One bar group per activity: TOT MAE bar with a +-1 SD whisker.
    const double bar_w = 34.0;
    const double group_gap = 26.0;
    const double left = 70.0, bottom = 300.0, top = 40.0;
    double max_v = 0.0;
    for (const auto& row : r.per_activity) max_v = std::max(max_v, row.mae.tot + row.tot_abs_error_sd);
    max_v = std::max(max_v, 0.1);
    const double scale = (bottom - top) / max_v;
    const double width = left + static_cast<double>(r.per_activity.size()) * (bar_w + group_gap) + 40.0;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << static_cast<int>(width)
        << "\" height=\"390\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">Take-over time MAE per secondary activity"
        << "</text>\n";
    svg << "<line x1=\"" << left - 10 << "\" y1=\"" << bottom << "\" x2=\"" << width - 20 << "\" y2=\""
        << bottom << "\" stroke=\"black\"/>\n";
    // y axis ticks at 0, max/2, max
    for (const double tick : {0.0, max_v / 2.0, max_v}) {
        const double y = bottom - tick * scale;
        svg << "<line x1=\"" << left - 14 << "\" y1=\"" << y << "\" x2=\"" << left - 10 << "\" y2=\"" << y
            << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << left - 18 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fixed3(tick)
            << "</text>\n";
    }
    double x = left;
    for (const auto& row : r.per_activity) {
        const double h = row.mae.tot * scale;
        svg << "<g class=\"activity-group\" data-activity=\"" << features::activity_name(row.activity)
            << "\">\n";
        svg << "  <rect x=\"" << x << "\" y=\"" << bottom - h << "\" width=\"" << bar_w << "\" height=\"" << h
            << "\" fill=\"#4878a8\"/>\n";
        const double whisker_top = bottom - (row.mae.tot + row.tot_abs_error_sd) * scale;
        const double whisker_bot = bottom - std::max(row.mae.tot - row.tot_abs_error_sd, 0.0) * scale;
        const double cx = x + bar_w / 2.0;
        svg << "  <line x1=\"" << cx << "\" y1=\"" << whisker_top << "\" x2=\"" << cx << "\" y2=\""
            << whisker_bot << "\" stroke=\"black\"/>\n";
        svg << "  <line x1=\"" << cx - 6 << "\" y1=\"" << whisker_top << "\" x2=\"" << cx + 6 << "\" y2=\""
            << whisker_top << "\" stroke=\"black\"/>\n";
        svg << "  <line x1=\"" << cx - 6 << "\" y1=\"" << whisker_bot << "\" x2=\"" << cx + 6 << "\" y2=\""
            << whisker_bot << "\" stroke=\"black\"/>\n";
        svg << "  <text x=\"" << cx << "\" y=\"" << bottom + 14 << "\" text-anchor=\"middle\" font-size=\"9\""
            << " transform=\"rotate(30 " << cx << " " << bottom + 14 << ")\">"
            << features::activity_name(row.activity) << "</text>\n";
        svg << "  <text x=\"" << cx << "\" y=\"" << bottom - h - 6 << "\" text-anchor=\"middle\">"
            << fixed3(row.mae.tot) << "</text>\n";
        svg << "</g>\n";
        x += bar_w + group_gap;
    }
    svg << "<text x=\"" << left << "\" y=\"370\" font-size=\"9\" fill=\"#555\">error bars: one standard "
        << "deviation of the absolute errors</text>\n";
    svg << "<text x=\"" << left << "\" y=\"382\" font-size=\"9\" fill=\"#555\">" << kReferenceFooter
        << "</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

std::string report_markdown(const EvalReport& r) {
    std::ostringstream md;
    md << "# Evaluation report\n\n";
    if (!r.model_id.empty()) md << "- model: `" << r.model_id << "`\n";
    if (!r.dataset_id.empty()) md << "- dataset: `" << r.dataset_id << "`\n";
    md << "- samples: " << r.overall.count << "\n\n";
    md << "| Eyes-on-road MAE (s) | Foot-on-pedal MAE (s) | Hands-on-wheel MAE (s) | Take-over time MAE (s) |\n";
    md << "|---|---|---|---|\n";
    md << "| " << fixed3(r.overall.e) << " | " << fixed3(r.overall.f) << " | " << fixed3(r.overall.h) << " | "
       << fixed3(r.overall.tot) << " |\n\n";
    if (!r.per_activity.empty()) {
        md << "## Per secondary activity\n\n";
        md << "| Activity | n | TOT MAE (s) | SD (s) | Mean target TOT (s) |\n";
        md << "|---|---|---|---|---|\n";
        for (const auto& row : r.per_activity)
            md << "| " << features::activity_name(row.activity) << " | " << row.count << " | "
               << fixed3(row.mae.tot) << " | " << fixed3(row.tot_abs_error_sd) << " | "
               << fixed3(row.mean_tot_target) << " |\n";
        md << "\n";
    }
    md << "---\n*" << kReferenceFooter << "*\n";
    return md.str();
}

}  // namespace

std::vector<std::string> emit_report(const EvalReport& report, ReportFormat format, const std::string& prefix) {
    std::vector<std::string> written;
    switch (format) {
        case ReportFormat::kCsv: {
            written.push_back(prefix + "_overall.csv");
            write_file(written.back(), overall_csv(report));
            written.push_back(prefix + "_per_activity.csv");
            write_file(written.back(), per_activity_csv(report));
            break;
        }
        case ReportFormat::kSvg: {
            written.push_back(prefix + "_per_activity.svg");
            write_file(written.back(), per_activity_svg(report));
            break;
        }
        case ReportFormat::kMarkdown: {
            written.push_back(prefix + ".md");
            write_file(written.back(), report_markdown(report));
            break;
        }
    }
    return written;
}

std::string report_to_json(const EvalReport& r) {
    json j;
    j["model_id"] = r.model_id;
    j["dataset_id"] = r.dataset_id;
    j["overall"] = {{"mae_e", r.overall.e}, {"mae_f", r.overall.f},     {"mae_h", r.overall.h},
                    {"mae_tot", r.overall.tot}, {"count", r.overall.count}};
    json rows = json::array();
    for (const auto& row : r.per_activity) {
        rows.push_back({{"activity", static_cast<int>(row.activity)},
                        {"count", row.count},
                        {"mae_e", row.mae.e},
                        {"mae_f", row.mae.f},
                        {"mae_h", row.mae.h},
                        {"mae_tot", row.mae.tot},
                        {"tot_abs_error_sd", row.tot_abs_error_sd},
                        {"mean_tot_target", row.mean_tot_target}});
    }
    j["per_activity"] = std::move(rows);
    return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw PersistenceError(std::string("corrupt report JSON: ") + e.what());
    }
    EvalReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.dataset_id = j.at("dataset_id").get<std::string>();
    const json& o = j.at("overall");
    r.overall = {o.at("mae_e").get<double>(), o.at("mae_f").get<double>(), o.at("mae_h").get<double>(),
                 o.at("mae_tot").get<double>(), o.at("count").get<std::size_t>()};
    for (const json& row : j.at("per_activity")) {
        ActivityRow a;
        a.activity = features::activity_from_code(row.at("activity").get<int>());
        a.count = row.at("count").get<std::size_t>();
        a.mae = {row.at("mae_e").get<double>(), row.at("mae_f").get<double>(), row.at("mae_h").get<double>(),
                 row.at("mae_tot").get<double>(), a.count};
        a.tot_abs_error_sd = row.at("tot_abs_error_sd").get<double>();
        a.mean_tot_target = row.at("mean_tot_target").get<double>();
        r.per_activity.push_back(a);
    }
    return r;
}

}  // namespace totkit::eval
