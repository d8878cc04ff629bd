#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sceneadapt/checkpoint.hpp"
#include "sceneadapt/config.hpp"
#include "sceneadapt/geom.hpp"
#include "sceneadapt/losses.hpp"
#include "sceneadapt/metrics.hpp"
#include "sceneadapt/nets.hpp"
#include "sceneadapt/optim.hpp"
#include "sceneadapt/scenegen.hpp"

namespace sceneadapt {

// ---- data access --------------------------------------------------------------

struct LabeledSet {
  std::vector<Image> images;
  std::vector<LabelMask> masks;
  std::size_t size() const { return images.size(); }
};

// Images without labels; the only form in which target-domain training data exists.
struct ImageSet {
  std::vector<Image> images;
  std::size_t size() const { return images.size(); }
};

// Loads frames from a manifest and refuses label reads for guarded subsets.
class DataAccess {
 public:
  explicit DataAccess(const DatasetManifest& m) : m_(m) {}

  const DatasetManifest& manifest() const { return m_; }
  void forbid_labels(const std::string& subset) { forbidden_.insert(subset); }
  bool labels_forbidden(const std::string& subset) const { return forbidden_.count(subset) > 0; }

  LabeledSet labeled(const std::string& subset, const std::string& split) const {
    if (labels_forbidden(subset))
      throw InvariantError("attempted to read labels of target subset " + subset + " during training");
    LabeledSet out;
    for (const auto* r : records(subset, split)) {
      auto f = load_frame(m_, *r);
      out.images.push_back(std::move(f.image));
      out.masks.push_back(std::move(f.mask));
    }
    return out;
  }

  ImageSet images(const std::string& subset, const std::string& split) const {
    ImageSet out;
    for (const auto* r : records(subset, split)) {
      Image img = read_ppm(m_.root / r->image_path);
      if (img.width != m_.width || img.height != m_.height)
        throw DataError("frame " + r->image_path + " does not match the manifest resolution");
      out.images.push_back(std::move(img));
    }
    return out;
  }

 private:
  std::vector<const FrameRecord*> records(const std::string& subset, const std::string& split) const {
    auto recs = m_.select(subset, split);
    if (recs.empty()) throw DataError("no " + split + " frames for subset " + subset);
    return recs;
  }

  const DatasetManifest& m_;
  std::set<std::string> forbidden_;
};

inline LabeledSet warp_set(const LabeledSet& in, const AffineTransform& h) {
  LabeledSet out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto w = warp_to_target(in.images[i], in.masks[i], h, in.images[i].width, in.images[i].height);
    out.images.push_back(std::move(w.image));
    out.masks.push_back(std::move(w.mask));
  }
  return out;
}

// ---- evaluation ---------------------------------------------------------------

struct EvalResult {
  std::string method;
  std::string subset;
  std::string split;
  std::uint64_t iteration = 0;
  ConfusionMatrix confusion;
  ClassMetric c_acc;
  ClassMetric m_iou;

  bool operator==(const EvalResult& o) const {
    return method == o.method && subset == o.subset && split == o.split && iteration == o.iteration &&
           confusion == o.confusion;
  }
};

inline EvalResult make_eval_result(std::string method, std::string subset, std::string split, std::uint64_t iteration,
                                   ConfusionMatrix cm) {
  EvalResult r{std::move(method), std::move(subset), std::move(split), iteration, std::move(cm), {}, {}};
  r.c_acc = per_class_accuracy(r.confusion);
  r.m_iou = mean_iou(r.confusion);
  return r;
}

// Per-pixel argmax of the softmax scores.
inline std::vector<LabelMask> predict(SegNetF<float>& f, const std::vector<Image>& images, std::size_t batch = 8) {
  std::vector<LabelMask> out;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    std::vector<const Image*> chunk;
    for (std::size_t i = start; i < std::min(images.size(), start + batch); ++i) chunk.push_back(&images[i]);
    Tape<float> tape;
    const auto probs = softmax_channels(f.forward(tape, tape.constant(stack_images<float>(chunk)), false));
    for (std::size_t n = 0; n < chunk.size(); ++n) out.push_back(argmax_channels(probs.value(), n));
  }
  return out;
}

inline ConfusionMatrix confusion_on(SegNetF<float>& f, const LabeledSet& data) {
  ConfusionMatrix cm(f.config().classes);
  const auto preds = predict(f, data.images);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.accumulate(preds[i], data.masks[i]);
  return cm;
}

// Inference from a checkpoint: only the segmentation network is rebuilt.
inline EvalResult evaluate(const Checkpoint& ckpt, const DatasetManifest& m, const std::string& subset,
                           const std::string& split, const std::string& method = "") {
  const std::size_t g_before = NetworkCensus::generators(), d_before = NetworkCensus::discriminators();
  const SegNetConfig cfg = infer_segnet_config(ckpt);
  if (cfg.classes != m.classes.size())
    throw CheckpointError("checkpoint predicts " + std::to_string(cfg.classes) + " classes, dataset has " +
                          std::to_string(m.classes.size()));
  SegNetF<float> f(cfg, 0);
  load_params(f.params(), ckpt);
  const DataAccess access(m);
  EvalResult r = make_eval_result(method, subset, split, ckpt.iteration, confusion_on(f, access.labeled(subset, split)));
  if (NetworkCensus::generators() != g_before || NetworkCensus::discriminators() != d_before)
    throw InvariantError("evaluation constructed a generator or discriminator");
  return r;
}

inline EvalResult evaluate(const fs::path& checkpoint, const DatasetManifest& m, const std::string& subset,
                           const std::string& split, const std::string& method = "") {
  return evaluate(load_checkpoint(checkpoint), m, subset, split, method);
}

// ---- training -----------------------------------------------------------------

struct LossRow {
  std::uint64_t iteration = 0;
  LossReport report;
};

struct EvalRecord {
  std::uint64_t iteration = 0;
  std::string subset;
  std::string split;
  double c_acc = 0.0;
  double m_iou = 0.0;

  bool operator==(const EvalRecord&) const = default;
};

struct TrainOutcome {
  std::vector<LossRow> losses;
  std::vector<EvalRecord> history;
  std::uint64_t best_iteration = 0;
  double best_val_m_iou = -1.0;
  Checkpoint best;  // every network of the run at the selected iteration
};

// Networks of a run; d (and g for baselines) may be null.
struct NetView {
  const ParamStore<float>* f = nullptr;
  const ParamStore<float>* g = nullptr;
  const ParamStore<float>* d = nullptr;
};

// Observation points for tests.
struct TrainHooks {
  std::function<void(std::uint64_t iteration, const NetView&)> after_step;
  std::function<void(const char* phase, const NetView&)> phase;  // entering "d-step" or "fg-step"
};

namespace detail {

inline void check_finite(const LossReport& r, std::uint64_t iteration) {
  for (const auto& v : {r.l_sem, r.l_rec, r.l_gan_g, r.l_gan_d})
    if (v && !std::isfinite(*v)) throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
  if (!std::isfinite(r.total)) throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
}

inline std::vector<std::uint8_t> concat_labels(const LabeledSet& d, const std::vector<std::size_t>& idx) {
  std::vector<std::uint8_t> out;
  for (const auto i : idx) out.insert(out.end(), d.masks[i].data.begin(), d.masks[i].data.end());
  return out;
}

inline void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
}

// Endless shuffled pass over indices 0..n-1, reshuffled at every wrap.
class Cycler {
 public:
  Cycler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle(order_, rng_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

inline Checkpoint snapshot(std::uint64_t iteration, std::uint64_t digest,
                           std::initializer_list<const ParamStore<float>*> stores) {
  Checkpoint c;
  for (const auto* s : stores)
    if (s) c.append(*s);
  c.iteration = iteration;
  c.config_digest = digest;
  return c;
}

}  // namespace detail

inline SegNetF<float> make_segnet(const ExperimentConfig& cfg, std::size_t classes) {
  return SegNetF<float>(SegNetConfig{classes, cfg.net_width, cfg.net_depth}, derive_seed({cfg.seed, 1}));
}

// Sem-only training of F with the baselines' protocol; `train` is the labelled
// data of the training domain, `val` the data used for model selection.
inline TrainOutcome train_supervised(const ExperimentConfig& cfg, const LabeledSet& train, const LabeledSet& val,
                                     const std::string& val_subset, std::size_t classes,
                                     const std::optional<fs::path>& checkpoint_path = std::nullopt,
                                     const TrainHooks& hooks = {}) {
  if (!cfg.supervised()) throw UsageError("train_supervised called for SceneAdapt");
  if (train.size() == 0) throw DataError("empty training set");
  SegNetF<float> f = make_segnet(cfg, classes);
  auto params = collect_params<float>(f.params());
  std::optional<SgdMomentum<float>> sgd;
  std::optional<Adam<float>> adam;
  if (cfg.uses_adam())
    adam.emplace(params, AdamOptions{cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  else
    sgd.emplace(params, SgdOptions{cfg.sgd_lr, cfg.sgd_momentum, cfg.sgd_weight_decay});

  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const PolySchedule schedule{cfg.epochs * per_epoch, cfg.poly_power};
  const std::uint64_t digest = config_digest(cfg);
  Rng rng(derive_seed({cfg.seed, 2}));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainOutcome out;
  std::uint64_t it = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle(order, rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), (b + 1) * cfg.batch_size)));
      std::vector<const Image*> imgs;
      for (const auto i : idx) imgs.push_back(&train.images[i]);
      f.params().zero_grad();
      Tape<float> tape;
      const auto sem = sem_loss(f.forward(tape, tape.constant(stack_images<float>(imgs))), detail::concat_labels(train, idx));
      const auto total = total_loss<float>(sem, std::nullopt, std::nullopt, cfg.losses, cfg.weights);
      LossReport rep;
      rep.l_sem = sem.value().item();
      rep.total = total.value().item();
      detail::check_finite(rep, it + 1);
      tape.backward(total);
      if (sgd) sgd->step(poly_multiplier(it, schedule));
      else adam->step();
      ++it;
      out.losses.push_back({it, rep});
      if (hooks.after_step) hooks.after_step(it, NetView{&f.params()});
    }
    if (epoch % cfg.eval_every_epochs == 0 || epoch == cfg.epochs) {
      const auto cm = confusion_on(f, val);
      const double acc = per_class_accuracy(cm).mean, iou = mean_iou(cm).mean;
      out.history.push_back({it, val_subset, "val", acc, iou});
      if (iou > out.best_val_m_iou) {
        out.best_val_m_iou = iou;
        out.best_iteration = it;
        out.best = detail::snapshot(it, digest, {&f.params()});
        if (checkpoint_path) save_checkpoint(out.best, *checkpoint_path);
      }
    }
  }
  return out;
}

// Joint training of F, G and (when the adversarial term is enabled) D on
// labelled source frames and unlabelled target images.
inline TrainOutcome train_sceneadapt(const ExperimentConfig& cfg, const LabeledSet& source, const ImageSet& target,
                                     const LabeledSet& source_val, std::size_t classes,
                                     const std::optional<fs::path>& checkpoint_path = std::nullopt,
                                     const TrainHooks& hooks = {}) {
  if (cfg.supervised()) throw UsageError("train_sceneadapt called for a baseline");
  if (!cfg.losses.sem) throw ConfigError("SceneAdapt requires the semantic loss");
  if (!cfg.losses.rec && !cfg.losses.gan) throw ConfigError("SceneAdapt needs the rec or gan loss");
  if (source.size() == 0 || target.size() == 0) throw DataError("empty source or target training set");

  SegNetF<float> f = make_segnet(cfg, classes);
  GeneratorG<float> g(classes, derive_seed({cfg.seed, 3}));
  std::optional<DiscriminatorD<float>> d;
  if (cfg.losses.gan) d.emplace(derive_seed({cfg.seed, 4}));

  auto fg_params = collect_params<float>(f.params(), g.params());
  std::optional<Adam<float>> fg_adam, d_adam;
  std::optional<SgdMomentum<float>> fg_sgd;
  const AdamOptions adam_opts{cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  if (cfg.uses_adam()) fg_adam.emplace(fg_params, adam_opts);
  else fg_sgd.emplace(fg_params, SgdOptions{cfg.sgd_lr, cfg.sgd_momentum, cfg.sgd_weight_decay});
  if (d) d_adam.emplace(collect_params<float>(d->params()), adam_opts);
  const PolySchedule schedule{cfg.iterations, cfg.poly_power};

  detail::Cycler src_order(source.size(), derive_seed({cfg.seed, 5}));
  detail::Cycler tgt_order(target.size(), derive_seed({cfg.seed, 6}));
  const std::uint64_t digest = config_digest(cfg);

  const NetView view{&f.params(), &g.params(), d ? &d->params() : nullptr};
  TrainOutcome out;
  for (std::uint64_t it = 1; it <= cfg.iterations; ++it) {
    const std::size_t si = src_order.next(), ti = tgt_order.next();
    Tape<float> tape;
    const auto xs = tape.constant(to_tensor(source.images[si]));
    const auto xt = tape.constant(to_tensor(target.images[ti]));
    const auto score_s = f.forward(tape, xs);
    const auto score_t = f.forward(tape, xt);
    const auto rec_s = g.forward(tape, score_s);
    const auto rec_t = g.forward(tape, score_t);
    LossReport rep;

    if (d) {
      if (hooks.phase) hooks.phase("d-step", view);
      Tape<float> dt;
      const auto real_s = d->forward(dt, dt.constant(xs.value()));
      const auto real_t = d->forward(dt, dt.constant(xt.value()));
      const auto fake_s = d->forward(dt, dt.constant(rec_s.value()));
      const auto fake_t = d->forward(dt, dt.constant(rec_t.value()));
      const auto l_d = scale(add(gan_d_loss(real_s, fake_s), gan_d_loss(real_t, fake_t)), 0.5f);
      rep.l_gan_d = l_d.value().item();
      d->params().zero_grad();
      dt.backward(l_d);
      d_adam->step();
    }

    if (hooks.phase) hooks.phase("fg-step", view);
    const auto sem = sem_loss(score_s, std::span<const std::uint8_t>(source.masks[si].data));
    std::optional<Var<float>> rec, gan;
    if (cfg.losses.rec) rec = scale(add(rec_loss(rec_s, xs), rec_loss(rec_t, xt)), 0.5f);
    if (cfg.losses.gan)
      gan = scale(add(gan_g_loss(d->forward(tape, rec_s, false), cfg.gan_objective),
                      gan_g_loss(d->forward(tape, rec_t, false), cfg.gan_objective)),
                  0.5f);
    const auto total = total_loss<float>(sem, rec, gan, cfg.losses, cfg.weights);
    rep.l_sem = sem.value().item();
    if (rec) rep.l_rec = rec->value().item();
    if (gan) rep.l_gan_g = gan->value().item();
    rep.total = total.value().item();
    detail::check_finite(rep, it);
    f.params().zero_grad();
    g.params().zero_grad();
    tape.backward(total);
    if (fg_adam) fg_adam->step();
    else fg_sgd->step(poly_multiplier(it - 1, schedule));
    out.losses.push_back({it, rep});
    if (hooks.after_step) hooks.after_step(it, view);

    if (it % cfg.eval_every_iterations == 0 || it == cfg.iterations) {
      const auto cm = confusion_on(f, source_val);
      const double acc = per_class_accuracy(cm).mean, iou = mean_iou(cm).mean;
      out.history.push_back({it, cfg.source, "val", acc, iou});
      if (iou > out.best_val_m_iou) {
        out.best_val_m_iou = iou;
        out.best_iteration = it;
        out.best = detail::snapshot(it, digest, {&f.params(), &g.params(), d ? &d->params() : nullptr});
        if (checkpoint_path) save_checkpoint(out.best, *checkpoint_path);
      }
    }
  }
  return out;
}

// ---- full runs ----------------------------------------------------------------

struct RunResult {
  ExperimentConfig config;
  TrainOutcome outcome;
  EvalResult target_test;
  EvalResult source_test;
  std::vector<std::string> classes;
};

inline std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", *v);
  return buf;
}

inline std::string loss_curve_csv(const std::vector<LossRow>& rows) {
  std::string out = "iteration,l_sem,l_rec,l_gan_g,l_gan_d,total\n";
  for (const auto& r : rows)
    out += std::to_string(r.iteration) + "," + fmt_opt(r.report.l_sem) + "," + fmt_opt(r.report.l_rec) + "," +
           fmt_opt(r.report.l_gan_g) + "," + fmt_opt(r.report.l_gan_d) + "," + fmt_opt(r.report.total) + "\n";
  return out;
}

inline std::string eval_history_csv(const std::vector<EvalRecord>& rows) {
  std::string out = "iteration,subset,split,c_acc,m_iou\n";
  for (const auto& r : rows)
    out += std::to_string(r.iteration) + "," + r.subset + "," + r.split + "," + format_metric(r.c_acc) + "," +
           format_metric(r.m_iou) + "\n";
  return out;
}

inline json metric_json(const ClassMetric& m) {
  json per = json::array();
  for (const auto& v : m.per_class) per.push_back(v ? json(*v) : json(nullptr));
  return {{"mean", m.mean}, {"per_class", per}};
}

inline json eval_json(const EvalResult& r) {
  return {{"subset", r.subset}, {"split", r.split}, {"c_acc", metric_json(r.c_acc)}, {"m_iou", metric_json(r.m_iou)}};
}

inline void check_subsets(const ExperimentConfig& cfg, const DatasetManifest& m) {
  if (!m.has_subset(cfg.source)) throw ConfigError("field 'source': subset " + cfg.source + " is not in the dataset");
  if (!m.has_subset(cfg.target)) throw ConfigError("field 'target': subset " + cfg.target + " is not in the dataset");
}

inline fs::path resolve_dataset(const ExperimentConfig& cfg) {
  fs::path p = cfg.dataset;
  if (fs::is_directory(p)) p /= "manifest.json";
  return p;
}

// Trains according to `cfg`, selects the best checkpoint, evaluates it on the
// target and source test splits and writes every artefact into `out_dir`.
// `warp_override` replaces the dataset's inter-view transform for WARP runs.
inline RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                const std::optional<AffineTransform>& warp_override = std::nullopt,
                                const TrainHooks& hooks = {}) {
  ensure_directory(out_dir);
  atomic_write(out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  const DatasetManifest m = load_manifest(resolve_dataset(cfg));
  check_subsets(cfg, m);
  const std::size_t classes = m.classes.size();
  const fs::path ckpt = out_dir / "best.ckpt";

  RunResult rr;
  rr.config = cfg;
  rr.classes = m.classes;
  {
    DataAccess access(m);
    switch (cfg.method) {
      case Method::NA:
        rr.outcome = train_supervised(cfg, access.labeled(cfg.source, "train"), access.labeled(cfg.source, "val"),
                                      cfg.source, classes, ckpt, hooks);
        break;
      case Method::FT:
        rr.outcome = train_supervised(cfg, access.labeled(cfg.target, "train"), access.labeled(cfg.target, "val"),
                                      cfg.target, classes, ckpt, hooks);
        break;
      case Method::WARP: {
        const AffineTransform h = warp_override ? *warp_override
                                                : inter_view_transform(m, parse_subset(cfg.source).first,
                                                                       parse_subset(cfg.target).first);
        rr.outcome = train_supervised(cfg, warp_set(access.labeled(cfg.source, "train"), h),
                                      warp_set(access.labeled(cfg.source, "val"), h), cfg.source, classes, ckpt, hooks);
        break;
      }
      case Method::SceneAdapt: {
        access.forbid_labels(cfg.target);
        rr.outcome = train_sceneadapt(cfg, access.labeled(cfg.source, "train"), access.images(cfg.target, "train"),
                                      access.labeled(cfg.source, "val"), classes, ckpt, hooks);
        break;
      }
    }
  }
  atomic_write(out_dir / "loss_curve.csv", loss_curve_csv(rr.outcome.losses));
  atomic_write(out_dir / "eval_history.csv", eval_history_csv(rr.outcome.history));

  rr.target_test = evaluate(rr.outcome.best, m, cfg.target, "test", to_string(cfg.method));
  rr.source_test = evaluate(rr.outcome.best, m, cfg.source, "test", to_string(cfg.method));
  atomic_write(out_dir / "eval_target_test.csv", metrics_csv(m.classes, rr.target_test.confusion));
  atomic_write(out_dir / "eval_source_test.csv", metrics_csv(m.classes, rr.source_test.confusion));

  json result = {{"method", to_string(cfg.method)},
                 {"source", cfg.source},
                 {"target", cfg.target},
                 {"adaptation", to_string(cfg.adaptation)},
                 {"losses", {{"sem", cfg.losses.sem}, {"rec", cfg.losses.rec}, {"gan", cfg.losses.gan}}},
                 {"seed", cfg.seed},
                 {"classes", m.classes},
                 {"best_iteration", rr.outcome.best_iteration},
                 {"best_val_m_iou", rr.outcome.best_val_m_iou},
                 {"target_test", eval_json(rr.target_test)},
                 {"source_test", eval_json(rr.source_test)}};
  atomic_write(out_dir / "result.json", result.dump(2) + "\n");
  return rr;
}

}  // namespace sceneadapt
