#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "heavytail/dataset.hpp"
#include "heavytail/errors.hpp"
#include "heavytail/rng.hpp"

namespace heavytail {

// Sinusoidal per-epoch threshold:
//
//   T(e) = N_max - (N_max - N_min) * (1 + cos(pi * e / total)) / 2
//
// rounded half-up and clamped to [N_min, N_max]. T(0) = N_min and
// T(total) = N_max exactly; the value is non-decreasing in e.
inline long long threshold_schedule(std::size_t epoch, std::size_t total,
                                    std::size_t n_min, std::size_t n_max) {
  if (total == 0) {
    throw ParameterError("threshold_schedule: total epochs must be >= 1");
  }
  if (epoch > total) {
    throw ParameterError("threshold_schedule: epoch " + std::to_string(epoch) +
                         " beyond total " + std::to_string(total));
  }
  if (n_min > n_max) {
    throw ParameterError("threshold_schedule: N_min exceeds N_max");
  }
  const double span = static_cast<double>(n_max) - static_cast<double>(n_min);
  // divide before scaling by pi: epoch/total hits exact dyadic fractions,
  // so the half-integer midpoint of even totals rounds half-up as specified
  const double phase = std::numbers::pi * (static_cast<double>(epoch) /
                                           static_cast<double>(total));
  const double value =
      static_cast<double>(n_max) - 0.5 * span * (1.0 + std::cos(phase));
  long long t = std::llround(value);
  t = std::max<long long>(t, static_cast<long long>(n_min));
  t = std::min<long long>(t, static_cast<long long>(n_max));
  return t;
}

// Caches the whole threshold trajectory for a run.
class SamplerSchedule {
 public:
  SamplerSchedule(std::size_t n_min, std::size_t n_max, std::size_t total)
      : n_min_(n_min), n_max_(n_max), total_(total) {
    thresholds_.reserve(total + 1);
    for (std::size_t e = 0; e <= total; ++e) {
      thresholds_.push_back(threshold_schedule(e, total, n_min, n_max));
    }
  }

  static SamplerSchedule for_dataset(const LongTailDataset& ds,
                                     std::size_t total) {
    return SamplerSchedule(ds.n_min(), ds.n_max(), total);
  }

  std::size_t n_min() const { return n_min_; }
  std::size_t n_max() const { return n_max_; }
  std::size_t total_epochs() const { return total_; }
  long long threshold(std::size_t epoch) const {
    return thresholds_.at(epoch);
  }

 private:
  std::size_t n_min_;
  std::size_t n_max_;
  std::size_t total_;
  std::vector<long long> thresholds_;
};

// Concrete per-epoch selection. Every class contributes exactly
// `threshold` entries: classes above the threshold are under-sampled
// without replacement, classes at or below it keep every original once and
// fill the surplus with repeats flagged for augmentation.
struct EpochPlan {
  struct Entry {
    std::size_t example_id;
    bool is_augmented;
  };

  std::size_t epoch = 0;
  long long threshold = 0;
  std::vector<std::vector<Entry>> per_class;

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& c : per_class) n += c.size();
    return n;
  }
};

inline EpochPlan compose_epoch(const LongTailDataset& ds,
                               const SamplerSchedule& schedule,
                               std::size_t epoch, std::uint64_t seed) {
  const long long threshold = schedule.threshold(epoch);
  Rng rng(derive_seed(seed, {0x45495321ull, epoch}));
  EpochPlan plan;
  plan.epoch = epoch;
  plan.threshold = threshold;
  plan.per_class.resize(ds.num_classes());
  const auto want = static_cast<std::size_t>(threshold);
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    const auto& ids = ds.class_index(c);
    if (ids.empty()) {
      throw ParameterError("compose_epoch: class " + std::to_string(c) +
                           " has no instances");
    }
    auto& out = plan.per_class[c];
    out.reserve(want);
    if (ids.size() > want) {
      // under-sample: partial Fisher-Yates, fresh draw every epoch
      std::vector<std::size_t> pool = ids;
      for (std::size_t k = 0; k < want; ++k) {
        const std::size_t j = k + rng.uniform_index(pool.size() - k);
        std::swap(pool[k], pool[j]);
        out.push_back({pool[k], false});
      }
    } else {
      for (std::size_t id : ids) out.push_back({id, false});
      for (std::size_t k = ids.size(); k < want; ++k) {
        out.push_back({ids[rng.uniform_index(ids.size())], true});
      }
    }
  }
  return plan;
}

// ---- over-sampling augmentation ---------------------------------------------

struct AugmentParams {
  double alpha = 1.0;         // Beta(alpha, alpha) mixing concentration
  double jitter_sigma = 0.05;
  double lambda_min = 0.5;    // lower edge of the mixing weight range
};

// Convex feature mix biased toward the original: lambda is a folded
// Beta(alpha, alpha) draw mapped onto [lambda_min, 1), so the original
// always dominates and keeps its label. Gaussian jitter on top.
inline LabeledExample augment(const LabeledExample& x,
                              const LabeledExample& background, Rng& rng,
                              const AugmentParams& params = {}) {
  if (x.features.size() != background.features.size()) {
    throw ShapeError("augment: feature dimensions disagree");
  }
  const double b = rng.beta(params.alpha, params.alpha);
  double folded = std::max(b, 1.0 - b);  // symmetric fold onto [0.5, 1)
  if (folded >= 1.0) folded = std::nextafter(1.0, 0.0);
  const double lambda =
      params.lambda_min + (folded - 0.5) * (1.0 - params.lambda_min) / 0.5;
  LabeledExample out;
  out.label = x.label;
  out.features.resize(x.features.size());
  for (std::size_t j = 0; j < out.features.size(); ++j) {
    out.features[j] =
        lambda * x.features[j] + (1.0 - lambda) * background.features[j];
  }
  if (params.jitter_sigma > 0.0) {
    for (auto& f : out.features) f += params.jitter_sigma * rng.normal();
  }
  return out;
}

}  // namespace heavytail
