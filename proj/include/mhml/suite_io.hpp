// JSON round-trip for suite configs and experiment results, plus the
// plain-text tables. Documents embed the fully resolved config; parsing
// and re-serializing is byte-stable, so identical runs produce identical
// files.
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mhml/bench.hpp"

namespace mhml::bench {

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"k", s.k},           {"dim", s.dim},     {"radius", s.radius},
       {"sigma", s.sigma},   {"priors", resolved_priors(s)},
       {"n_train", s.n_train}, {"n_val", s.n_val}, {"n_test", s.n_test},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  SyntheticSpec d;
  s.k = j.value("k", d.k);
  s.dim = j.value("dim", d.dim);
  s.radius = j.value("radius", d.radius);
  s.sigma = j.value("sigma", d.sigma);
  s.priors = j.value("priors", std::vector<double>{});
  s.n_train = j.value("n_train", d.n_train);
  s.n_val = j.value("n_val", d.n_val);
  s.n_test = j.value("n_test", d.n_test);
  s.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const MethodConfig& m) {
  j = {{"kind", to_string(m.kind)},
       {"epochs", m.epochs},
       {"batch_size", m.batch_size},
       {"lr", m.lr},
       {"momentum", m.momentum},
       {"ls_epsilon", m.ls_epsilon},
       {"ensemble_size", m.ensemble_size},
       {"w_hi", m.w_hi},
       {"w_lo", m.w_lo},
       {"hidden", m.hidden},
       {"feature_dim", m.feature_dim},
       {"seed", m.seed}};
}

inline void from_json(const nlohmann::json& j, MethodConfig& m) {
  MethodConfig d;
  m.kind = method_kind_from_string(j.at("kind").get<std::string>());
  m.epochs = j.value("epochs", d.epochs);
  m.batch_size = j.value("batch_size", d.batch_size);
  m.lr = j.value("lr", d.lr);
  m.momentum = j.value("momentum", d.momentum);
  m.ls_epsilon = j.value("ls_epsilon", d.ls_epsilon);
  m.ensemble_size = j.value("ensemble_size", d.ensemble_size);
  m.w_hi = j.value("w_hi", d.w_hi);
  m.w_lo = j.value("w_lo", d.w_lo);
  m.hidden = j.value("hidden", d.hidden);
  m.feature_dim = j.value("feature_dim", d.feature_dim);
  m.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const SuiteConfig& c) {
  j = {{"spec", c.spec},
       {"methods", c.methods},
       {"seeds", c.seeds},
       {"n_bins", c.n_bins},
       {"ts_comparison", c.ts_comparison}};
}

inline void from_json(const nlohmann::json& j, SuiteConfig& c) {
  SuiteConfig d;
  c.spec = j.value("spec", d.spec);
  c.methods = j.value("methods", std::vector<MethodConfig>{});
  if (c.methods.empty()) c.methods = default_suite_config().methods;
  c.seeds = j.value("seeds", d.seeds);
  c.n_bins = j.value("n_bins", d.n_bins);
  c.ts_comparison = j.value("ts_comparison", d.ts_comparison);
}

inline void to_json(nlohmann::json& j, const TsCell& t) {
  j = {{"temperature", metrics::round6(t.temperature)},
       {"val_nll_t1", metrics::round6(t.val_nll_t1)},
       {"val_nll_fitted", metrics::round6(t.val_nll_fitted)},
       {"pre", t.pre},
       {"post", t.post}};
}

inline void from_json(const nlohmann::json& j, TsCell& t) {
  t.temperature = j.at("temperature").get<double>();
  t.val_nll_t1 = j.at("val_nll_t1").get<double>();
  t.val_nll_fitted = j.at("val_nll_fitted").get<double>();
  t.pre = j.at("pre").get<metrics::CalibrationReport>();
  t.post = j.at("post").get<metrics::CalibrationReport>();
}

inline void to_json(nlohmann::json& j, const SuiteCell& c) {
  j = {{"method", c.method}, {"seed", c.seed}, {"ok", c.ok}};
  if (!c.ok) j["error"] = c.error;
  if (c.ok) j["report"] = c.report;
  if (c.ts) j["ts"] = *c.ts;
}

inline void from_json(const nlohmann::json& j, SuiteCell& c) {
  c.method = j.at("method").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ok = j.at("ok").get<bool>();
  c.error = j.value("error", "");
  if (j.contains("report")) c.report = j.at("report").get<metrics::CalibrationReport>();
  if (j.contains("ts")) c.ts = j.at("ts").get<TsCell>();
}

inline void to_json(nlohmann::json& j, const MethodSummary& s) {
  using metrics::round6;
  j = {{"method", s.method},
       {"n_ok", s.n_ok},
       {"acc_median", round6(s.acc_median)},
       {"acc_std", round6(s.acc_std)},
       {"ece_median", round6(s.ece_median)},
       {"ece_std", round6(s.ece_std)},
       {"nll_median", round6(s.nll_median)},
       {"nll_std", round6(s.nll_std)},
       {"brier_median", round6(s.brier_median)},
       {"brier_std", round6(s.brier_std)}};
}

inline void from_json(const nlohmann::json& j, MethodSummary& s) {
  s.method = j.at("method").get<std::string>();
  s.n_ok = j.at("n_ok").get<std::size_t>();
  s.acc_median = j.at("acc_median").get<double>();
  s.acc_std = j.at("acc_std").get<double>();
  s.ece_median = j.at("ece_median").get<double>();
  s.ece_std = j.at("ece_std").get<double>();
  s.nll_median = j.at("nll_median").get<double>();
  s.nll_std = j.at("nll_std").get<double>();
  s.brier_median = j.at("brier_median").get<double>();
  s.brier_std = j.at("brier_std").get<double>();
}

inline nlohmann::json result_to_json(const ExperimentResult& r) {
  nlohmann::json j;
  j["format"] = "mhml-result";
  j["version"] = 1;
  j["config"] = r.config;
  j["master_seed"] = r.config.spec.seed;
  j["cells"] = r.cells;
  j["summaries"] = r.summaries;
  j["ranks"] = r.ranks;
  return j;
}

inline ExperimentResult result_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mhml-result") {
    throw std::invalid_argument("result document: unrecognized format tag");
  }
  ExperimentResult r;
  r.config = j.at("config").get<SuiteConfig>();
  r.cells = j.at("cells").get<std::vector<SuiteCell>>();
  r.summaries = j.at("summaries").get<std::vector<MethodSummary>>();
  r.ranks = j.at("ranks").get<metrics::RankTable>();
  return r;
}

// --- plain-text rendering ----------------------------------------------

namespace detail {

inline std::string fmt(double v, double scale, int width, int prec) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%*.*f", width, prec, v * scale);
  return buf;
}

}  // namespace detail

// ACC/ECE/NLL in the x100 convention of the reference tables when
// percent is set.
inline std::string render_table(const ExperimentResult& r, bool percent = true) {
  const double s = percent ? 100.0 : 1.0;
  const int prec = percent ? 2 : 4;
  std::ostringstream out;
  const SyntheticSpec& spec = r.config.spec;
  out << "Synthetic suite: K=" << spec.k << " dim=" << spec.dim << " radius=" << spec.radius
      << " sigma=" << spec.sigma << " n=" << spec.n_train << "/" << spec.n_val << "/"
      << spec.n_test << " data-seed=" << spec.seed << " seeds=" << r.config.seeds.size() << "\n\n";

  out << "Method      ACC      ECE      NLL   Rank\n";
  for (const MethodSummary& m : r.summaries) {
    out << std::string(6 - std::min<std::size_t>(6, m.method.size()), ' ') << m.method;
    if (m.n_ok == 0) {
      out << "   (all cells failed)\n";
      continue;
    }
    out << detail::fmt(m.acc_median, s, 9, prec) << detail::fmt(m.ece_median, s, 9, prec)
        << detail::fmt(m.nll_median, s, 9, prec);
    for (const metrics::RankRow& row : r.ranks.rows) {
      if (row.method == m.method) out << detail::fmt(row.avg_rank, 1.0, 7, 1);
    }
    out << "\n";
  }

  out << "\nDispersion over " << r.config.seeds.size() << " seeds (median +- std):\n";
  out << "Method               ACC              ECE              NLL            BRIER\n";
  for (const MethodSummary& m : r.summaries) {
    if (m.n_ok == 0) continue;
    out << std::string(6 - std::min<std::size_t>(6, m.method.size()), ' ') << m.method;
    const auto cellf = [&](double med, double sd) {
      return detail::fmt(med, s, 9, prec) + "+-" + detail::fmt(sd, s, 0, prec);
    };
    out << cellf(m.acc_median, m.acc_std) << cellf(m.ece_median, m.ece_std)
        << cellf(m.nll_median, m.nll_std) << cellf(m.brier_median, m.brier_std) << "\n";
  }

  bool any_ts = false;
  for (const SuiteCell& c : r.cells) any_ts = any_ts || c.ts.has_value();
  if (any_ts) {
    out << "\nTemperature scaling (logit-average forward):\n";
    out << "Method      ACC      ECE      NLL        T\n";
    for (const MethodSummary& m : r.summaries) {
      std::vector<double> acc_pre, ece_pre, nll_pre, acc_post, ece_post, nll_post, temps;
      for (const SuiteCell& c : r.cells) {
        if (c.method != m.method || !c.ok || !c.ts) continue;
        acc_pre.push_back(c.ts->pre.accuracy);
        ece_pre.push_back(c.ts->pre.ece);
        nll_pre.push_back(c.ts->pre.nll);
        acc_post.push_back(c.ts->post.accuracy);
        ece_post.push_back(c.ts->post.ece);
        nll_post.push_back(c.ts->post.nll);
        temps.push_back(c.ts->temperature);
      }
      if (acc_pre.empty()) continue;
      out << std::string(6 - std::min<std::size_t>(6, m.method.size()), ' ') << m.method
          << detail::fmt(detail::median(acc_pre), s, 9, prec)
          << detail::fmt(detail::median(ece_pre), s, 9, prec)
          << detail::fmt(detail::median(nll_pre), s, 9, prec) << "        -\n";
      out << "   +TS" << detail::fmt(detail::median(acc_post), s, 9, prec)
          << detail::fmt(detail::median(ece_post), s, 9, prec)
          << detail::fmt(detail::median(nll_post), s, 9, prec)
          << detail::fmt(detail::median(temps), 1.0, 9, 4) << "\n";
    }
  }

  bool any_fail = false;
  for (const SuiteCell& c : r.cells) any_fail = any_fail || !c.ok;
  if (any_fail) {
    out << "\nFailed cells:\n";
    for (const SuiteCell& c : r.cells) {
      if (!c.ok) out << "  " << c.method << " seed " << c.seed << ": " << c.error << "\n";
    }
  }
  return out.str();
}

inline std::string render_report(const metrics::CalibrationReport& r, bool percent = true) {
  const double s = percent ? 100.0 : 1.0;
  const int prec = percent ? 2 : 4;
  std::ostringstream out;
  out << "Method " << r.method << " on split '" << r.split << "' (" << r.n_samples << " samples)\n";
  out << "  ACC" << detail::fmt(r.accuracy, s, 9, prec) << "  ECE" << detail::fmt(r.ece, s, 9, prec)
      << "  NLL" << detail::fmt(r.nll, s, 9, prec) << "  BRIER" << detail::fmt(r.brier, s, 9, prec)
      << "\n";
  out << "  bin        range    count      acc     conf\n";
  for (std::size_t i = 0; i < r.bins.size(); ++i) {
    const metrics::BinStats& b = r.bins[i];
    char line[128];
    std::snprintf(line, sizeof(line), "  %3zu  %.3f-%.3f %8zu %8.4f %8.4f\n", i + 1, b.lo, b.hi,
                  b.count, b.acc, b.conf);
    out << line;
  }
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f << content;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  nlohmann::json j;
  f >> j;
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f << j.dump(2) << '\n';
}

}  // namespace mhml::bench
