#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sceneadapt/trainer.hpp"

namespace sceneadapt {

using SubsetPair = std::pair<std::string, std::string>;

inline std::vector<SubsetPair> view_pairs() {
  return {{"A1", "B1"}, {"A2", "B2"}, {"A3", "B3"}, {"B1", "A1"}, {"B2", "A2"}, {"B3", "A3"}};
}

inline std::vector<SubsetPair> scene_pairs() {
  return {{"A1", "A2"}, {"A1", "A3"}, {"A2", "A1"}, {"A2", "A3"}, {"A3", "A1"}, {"A3", "A2"}};
}

struct MatrixEntry {
  ExperimentConfig config;
  fs::path out_dir;
};

inline std::string loss_label(const LossToggles& l) {
  std::string s = "sem";
  if (l.rec) s += "+rec";
  if (l.gan) s += "+gan";
  return s;
}

// Column label of a run in the report tables.
inline std::string method_label(Method m, const LossToggles& l) {
  if (m != Method::SceneAdapt || (l.rec && l.gan)) return to_string(m);
  return to_string(m) + "(" + loss_label(l) + ")";
}

inline std::string run_name(const ExperimentConfig& c) {
  std::string n = to_string(c.method);
  if (c.method == Method::SceneAdapt && !(c.losses.rec && c.losses.gan)) n += "_" + loss_label(c.losses);
  return n + "_" + c.source + "-" + c.target + "_s" + std::to_string(c.seed);
}

inline ExperimentConfig with_pair(ExperimentConfig c, Method m, const SubsetPair& pair) {
  const bool was_supervised = c.supervised();
  c.method = m;
  c.source = pair.first;
  c.target = pair.second;
  c.adaptation = adaptation_kind(pair.first, pair.second);
  if (c.supervised()) c.losses = {true, false, false};
  else if (was_supervised) c.losses = {true, true, true};
  return c;
}

inline std::vector<MatrixEntry> expand(const ExperimentConfig& base, const std::vector<Method>& methods,
                                       const std::vector<SubsetPair>& pairs, const std::vector<std::uint64_t>& seeds,
                                       const fs::path& root) {
  std::vector<MatrixEntry> out;
  for (const auto seed : seeds)
    for (const auto& pair : pairs)
      for (const auto m : methods) {
        auto c = with_pair(base, m, pair);
        c.seed = seed;
        if (m == Method::WARP && c.adaptation != AdaptationKind::PointOfView) continue;
        c.out = (root / run_name(c)).string();
        out.push_back({c, c.out});
      }
  return out;
}

// The three loss rows of the ablation, for one view pair and one scene pair.
inline std::vector<MatrixEntry> ablation_matrix(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                                const fs::path& root, const SubsetPair& view = {"A1", "B1"},
                                                const SubsetPair& scene = {"A1", "A2"}) {
  if (adaptation_kind(view.first, view.second) != AdaptationKind::PointOfView)
    throw ConfigError("ablation view pair " + view.first + "-" + view.second + " is not a point-of-view pair");
  if (adaptation_kind(scene.first, scene.second) != AdaptationKind::Scene)
    throw ConfigError("ablation scene pair " + scene.first + "-" + scene.second + " is not a scene pair");
  std::vector<MatrixEntry> out;
  for (const auto seed : seeds)
    for (const auto& pair : {view, scene})
      for (const LossToggles l : {LossToggles{true, true, false}, LossToggles{true, false, true}, LossToggles{true, true, true}}) {
        auto c = with_pair(base, Method::SceneAdapt, pair);
        c.losses = l;
        c.seed = seed;
        c.out = (root / run_name(c)).string();
        out.push_back({c, c.out});
      }
  return out;
}

// Runs sharing a source subset whose source-test scores are compared.
inline std::vector<MatrixEntry> source_domain_matrix(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                                     const fs::path& root) {
  std::vector<MatrixEntry> out;
  for (const auto seed : seeds)
    for (const auto& [m, pair] : std::vector<std::pair<Method, SubsetPair>>{
             {Method::NA, {"A1", "B1"}}, {Method::SceneAdapt, {"A1", "B1"}}, {Method::SceneAdapt, {"A1", "A2"}}}) {
      auto c = with_pair(base, m, pair);
      c.seed = seed;
      c.out = (root / run_name(c)).string();
      out.push_back({c, c.out});
    }
  return out;
}

// Checks every dataset and subset up front, then runs the entries on `jobs`
// worker threads. Each run is independent and writes only to its own directory.
inline std::vector<RunResult> run_matrix(const std::vector<MatrixEntry>& entries, std::size_t jobs = 1,
                                         const std::function<void(const RunResult&)>& on_done = {}) {
  std::map<std::string, DatasetManifest> manifests;
  for (const auto& e : entries) {
    const auto path = resolve_dataset(e.config).string();
    if (!manifests.count(path)) manifests.emplace(path, load_manifest(path));
    check_subsets(e.config, manifests.at(path));
  }
  std::set<std::string> dirs;
  for (const auto& e : entries)
    if (!dirs.insert(fs::weakly_canonical(e.out_dir).string()).second)
      throw ConfigError("two runs share the output directory " + e.out_dir.string());

  std::vector<RunResult> results(entries.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < entries.size();) {
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        results[i] = run_experiment(entries[i].config, entries[i].out_dir);
        std::lock_guard lock(mu);
        if (on_done) on_done(results[i]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, std::min(jobs, entries.size())); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

// ---- reports --------------------------------------------------------------------

// One finished run as read back from its result.json.
struct RunSummary {
  std::string label;
  std::string source, target, adaptation, losses;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
  ClassMetric target_c_acc, target_m_iou, source_c_acc, source_m_iou;
};

inline ClassMetric metric_from_json(const json& j) {
  ClassMetric m;
  m.mean = j.at("mean").get<double>();
  for (const auto& v : j.at("per_class")) m.per_class.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  return m;
}

inline RunSummary read_run(const fs::path& dir) {
  const fs::path p = dir / "result.json";
  json j;
  try {
    j = json::parse(read_file(p));
    RunSummary s;
    s.source = j.at("source").get<std::string>();
    s.target = j.at("target").get<std::string>();
    s.adaptation = j.at("adaptation").get<std::string>();
    const auto& l = j.at("losses");
    const LossToggles toggles{l.at("sem").get<bool>(), l.at("rec").get<bool>(), l.at("gan").get<bool>()};
    s.losses = loss_label(toggles);
    const std::string method = j.at("method").get<std::string>();
    Method m = Method::SceneAdapt;
    for (const auto cand : {Method::NA, Method::FT, Method::WARP, Method::SceneAdapt})
      if (to_string(cand) == method) m = cand;
    s.label = method_label(m, toggles);
    s.seed = j.at("seed").get<std::uint64_t>();
    s.classes = j.at("classes").get<std::vector<std::string>>();
    s.target_c_acc = metric_from_json(j.at("target_test").at("c_acc"));
    s.target_m_iou = metric_from_json(j.at("target_test").at("m_iou"));
    s.source_c_acc = metric_from_json(j.at("source_test").at("c_acc"));
    s.source_m_iou = metric_from_json(j.at("source_test").at("m_iou"));
    return s;
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": malformed run result: " + e.what());
  }
}

// Averages of a metric over runs: the mean row, then one entry per class
// (classes absent from every run stay empty).
struct AveragedMetric {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;
  std::size_t runs = 0;
};

inline AveragedMetric average(const std::vector<const ClassMetric*>& ms, std::size_t classes) {
  AveragedMetric a;
  a.per_class.resize(classes);
  std::vector<double> sum(classes, 0.0);
  std::vector<std::size_t> n(classes, 0);
  for (const auto* m : ms) {
    a.mean += m->mean;
    for (std::size_t k = 0; k < classes && k < m->per_class.size(); ++k)
      if (m->per_class[k]) sum[k] += *m->per_class[k], ++n[k];
  }
  a.runs = ms.size();
  if (a.runs) a.mean /= static_cast<double>(a.runs);
  for (std::size_t k = 0; k < classes; ++k)
    if (n[k]) a.per_class[k] = sum[k] / static_cast<double>(n[k]);
  return a;
}

enum class ReportDomain { Target, Source };
enum class ReportMetric { CAcc, MIoU };

// class,<label1>,<label2>,...: "Average" first, then one row per class. Each
// column averages every run carrying that label.
inline std::string report_table(const std::vector<RunSummary>& runs, ReportDomain domain, ReportMetric metric) {
  if (runs.empty()) throw DataError("no runs to report");
  const auto& classes = runs.front().classes;
  std::vector<std::string> labels;
  std::map<std::string, std::vector<const ClassMetric*>> by_label;
  for (const auto& r : runs) {
    if (r.classes != classes) throw DataError("runs disagree on the class taxonomy");
    if (!by_label.count(r.label)) labels.push_back(r.label);
    const ClassMetric* m = domain == ReportDomain::Target ? (metric == ReportMetric::CAcc ? &r.target_c_acc : &r.target_m_iou)
                                                          : (metric == ReportMetric::CAcc ? &r.source_c_acc : &r.source_m_iou);
    by_label[r.label].push_back(m);
  }
  std::vector<AveragedMetric> cols;
  for (const auto& l : labels) cols.push_back(average(by_label[l], classes.size()));
  std::string out = "class";
  for (const auto& l : labels) out += "," + l;
  out += "\nAverage";
  for (const auto& c : cols) out += "," + format_metric(c.mean);
  out += "\n";
  for (std::size_t k = 0; k < classes.size(); ++k) {
    out += classes[k];
    for (const auto& c : cols) out += "," + format_metric(c.per_class[k]);
    out += "\n";
  }
  return out;
}

// losses,adaptation,runs,c_acc,m_iou: one row per (loss set, adaptation kind),
// target-test averages over seeds and pairs.
inline std::string ablation_table(const std::vector<RunSummary>& runs) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<const RunSummary*>> rows;
  for (const auto& r : runs) {
    const auto key = std::make_pair(r.losses, r.adaptation);
    if (!rows.count(key)) keys.push_back(key);
    rows[key].push_back(&r);
  }
  std::string out = "losses,adaptation,runs,c_acc,m_iou\n";
  for (const auto& key : keys) {
    double acc = 0, iou = 0;
    for (const auto* r : rows[key]) acc += r->target_c_acc.mean, iou += r->target_m_iou.mean;
    const auto n = static_cast<double>(rows[key].size());
    out += key.first + "," + key.second + "," + std::to_string(rows[key].size()) + "," + format_metric(acc / n) + "," +
           format_metric(iou / n) + "\n";
  }
  return out;
}

inline std::vector<RunSummary> read_runs(const std::vector<fs::path>& dirs) {
  std::vector<RunSummary> out;
  for (const auto& d : dirs) out.push_back(read_run(d));
  return out;
}

// Run directories directly below `root` that hold a result.json, sorted by name.
inline std::vector<fs::path> find_runs(const fs::path& root) {
  std::vector<fs::path> out;
  if (fs::exists(root / "result.json")) out.push_back(root);
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(root, ec))
    if (e.is_directory() && fs::exists(e.path() / "result.json")) out.push_back(e.path());
  if (ec) throw IoError("cannot list " + root.string() + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

// Writes target_{c_acc,m_iou}.csv and source_{c_acc,m_iou}.csv into `out_dir`.
inline std::vector<fs::path> write_report(const std::vector<RunSummary>& runs, const fs::path& out_dir) {
  ensure_directory(out_dir);
  std::vector<fs::path> files;
  for (const auto& [domain, dname] : {std::pair{ReportDomain::Target, "target"}, std::pair{ReportDomain::Source, "source"}})
    for (const auto& [metric, mname] : {std::pair{ReportMetric::CAcc, "c_acc"}, std::pair{ReportMetric::MIoU, "m_iou"}}) {
      const fs::path p = out_dir / (std::string(dname) + "_" + mname + ".csv");
      atomic_write(p, report_table(runs, domain, metric));
      files.push_back(p);
    }
  return files;
}

}  // namespace sceneadapt
