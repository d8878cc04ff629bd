#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "sceneadapt/diffcore/ops.hpp"

namespace sceneadapt {

// Lower bound applied to every probability before taking its log.
inline constexpr double kProbFloor = 1e-7;

enum class GeneratorObjective { NonSaturating, Minimax };

struct LossToggles {
  bool sem = true;
  bool rec = true;
  bool gan = true;
  bool any() const { return sem || rec || gan; }
};

struct LossWeights {
  double sem = 1.0;
  double rec = 1.0;
  double gan = 1.0;
};

struct LossReport {
  std::optional<double> l_sem;
  std::optional<double> l_rec;
  std::optional<double> l_gan_g;
  std::optional<double> l_gan_d;
  double total = 0.0;
};

namespace detail {
template <class T>
Var<T> neg_log(const Var<T>& p) {
  return scale(log(clamp(p, static_cast<T>(kProbFloor), T{1})), T{-1});
}
}  // namespace detail

// Mean over pixels of -log softmax(scores)[label]. Labels are (B,H,W) class ids.
template <class T>
Var<T> sem_loss(const Var<T>& scores, std::span<const std::uint8_t> labels) {
  return mean(detail::neg_log(gather_channels(softmax_channels(scores), labels)));
}

// Mean absolute difference (L1 normalized by element count).
template <class T>
Var<T> rec_loss(const Var<T>& reconstruction, const Var<T>& input) {
  if (reconstruction.shape() != input.shape())
    throw UsageError("rec_loss: shape mismatch " + to_string(reconstruction.shape()) + " vs " +
                     to_string(input.shape()));
  return mean(abs(sub(reconstruction, input)));
}

// Discriminator objective on raw patch scores:
// mean(-log sigmoid(real)) + mean(-log(1 - sigmoid(fake))).
// The caller feeds D a detached reconstruction so no gradient reaches G or F.
template <class T>
Var<T> gan_d_loss(const Var<T>& d_real, const Var<T>& d_fake) {
  // 1 - sigmoid(x) == sigmoid(-x), which stays accurate when sigmoid(x) rounds to 1.
  return add(mean(detail::neg_log(sigmoid(d_real))), mean(detail::neg_log(sigmoid(scale(d_fake, T{-1})))));
}

// Generator objective: mean(-log sigmoid(fake)) by default; the minimax form
// mean(log(1 - sigmoid(fake))) is kept for fidelity runs.
template <class T>
Var<T> gan_g_loss(const Var<T>& d_fake, GeneratorObjective objective = GeneratorObjective::NonSaturating) {
  if (objective == GeneratorObjective::Minimax)
    return scale(mean(detail::neg_log(sigmoid(scale(d_fake, T{-1})))), T{-1});
  return mean(detail::neg_log(sigmoid(d_fake)));
}

// Weighted sum of the enabled, present terms. A term that is disabled or
// absent (e.g. sem on an unlabeled batch) never enters the graph.
template <class T>
Var<T> total_loss(const std::optional<Var<T>>& sem, const std::optional<Var<T>>& rec,
                  const std::optional<Var<T>>& gan_g, const LossToggles& toggles = {},
                  const LossWeights& weights = {}) {
  if (!toggles.any()) throw ConfigError("all loss terms disabled");
  std::optional<Var<T>> acc;
  auto push = [&acc](const std::optional<Var<T>>& term, bool on, double w) {
    if (!on || !term) return;
    Var<T> v = w == 1.0 ? *term : scale(*term, static_cast<T>(w));
    acc = acc ? add(*acc, v) : v;
  };
  push(sem, toggles.sem, weights.sem);
  push(rec, toggles.rec, weights.rec);
  push(gan_g, toggles.gan, weights.gan);
  if (!acc) throw UsageError("total_loss: no enabled term was provided");
  return *acc;
}

}  // namespace sceneadapt
