#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heavytail/autodiff.hpp"
#include "heavytail/dataset.hpp"
#include "heavytail/errors.hpp"
#include "heavytail/model.hpp"
#include "heavytail/rng.hpp"
#include "heavytail/sampler.hpp"

namespace heavytail {

// One side of a pair: either an original example (source_id set) or an
// augmented copy fabricated for singleton classes.
struct PairedExample {
  std::vector<double> features;
  int label = 0;
  std::optional<std::size_t> source_id;
  bool augmented_copy = false;
};

// Matched positives and cross-matched head/tail negatives, parallel to the
// anchor batch.
struct PairBatch {
  std::vector<PairedExample> positives;
  std::vector<PairedExample> negatives;
};

struct AnchorRef {
  std::size_t source_id;
  int label;
};

// Positives come from the anchor's class in the full dataset, excluding the
// anchor itself; a singleton class falls back to a near-identity augmented
// copy. Negatives come from the opposite side of the head/tail partition,
// or from any other class when that side holds no examples.
inline PairBatch build_pairs(std::span<const AnchorRef> anchors,
                             const LongTailDataset& ds,
                             const HeadTailPartition& part, Rng& rng,
                             const AugmentParams& fallback_aug = {1.0, 0.05,
                                                                  0.9}) {
  if (part.is_head.size() != ds.num_classes()) {
    throw ParameterError("build_pairs: partition does not cover the dataset");
  }
  // example pools per partition side
  std::vector<std::size_t> head_pool, tail_pool;
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    auto& pool = part.head_class(c) ? head_pool : tail_pool;
    for (std::size_t id : ds.class_index(c)) pool.push_back(id);
  }

  PairBatch out;
  out.positives.reserve(anchors.size());
  out.negatives.reserve(anchors.size());
  for (const auto& anchor : anchors) {
    const auto cls = static_cast<std::size_t>(anchor.label);
    const auto& members = ds.class_index(cls);

    PairedExample pos;
    if (members.size() >= 2) {
      std::size_t anchor_pos = members.size();
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (members[i] == anchor.source_id) {
          anchor_pos = i;
          break;
        }
      }
      std::size_t pick;
      if (anchor_pos == members.size()) {
        pick = members[rng.uniform_index(members.size())];
      } else {
        std::size_t r = rng.uniform_index(members.size() - 1);
        if (r >= anchor_pos) ++r;
        pick = members[r];
      }
      const auto& ex = ds.example(pick);
      pos = {ex.features, ex.label, pick, false};
    } else {
      // singleton class: augmented near-copy of the anchor itself
      const auto& self = ds.example(anchor.source_id);
      const auto& background =
          ds.example(rng.uniform_index(ds.size()));
      LabeledExample mixed = augment(self, background, rng, fallback_aug);
      pos = {std::move(mixed.features), mixed.label, std::nullopt, true};
    }

    const bool anchor_is_head = part.head_class(cls);
    const auto& opposite = anchor_is_head ? tail_pool : head_pool;
    std::size_t neg_id;
    if (!opposite.empty()) {
      neg_id = opposite[rng.uniform_index(opposite.size())];
    } else {
      // degenerate side: any example outside the anchor's class
      const std::size_t others = ds.size() - members.size();
      if (others == 0) {
        throw DegenerateInputError(
            "build_pairs: no negative candidates outside class " +
            std::to_string(cls));
      }
      std::size_t r = rng.uniform_index(others);
      neg_id = 0;
      for (std::size_t id = 0; id < ds.size(); ++id) {
        if (static_cast<std::size_t>(ds.example(id).label) == cls) continue;
        if (r == 0) {
          neg_id = id;
          break;
        }
        --r;
      }
    }
    const auto& nex = ds.example(neg_id);
    out.negatives.push_back({nex.features, nex.label, neg_id, false});
    out.positives.push_back(std::move(pos));
  }
  return out;
}

// ---- pair losses -------------------------------------------------------------

// 1 - <f(x), f(x_p)> on normalized features; 0 iff positively parallel,
// 2 at opposite directions.
inline Tape::Id intra_loss(Tape& tape, Tape::Id f_x, Tape::Id f_xp) {
  auto sim = tape.cosine_similarity(f_x, f_xp);
  return tape.scalar_add(tape.scalar_mul(sim, -1.0), 1.0);
}

// Hinge on the similarity gap: [<f(x), f(x_n)> - <f(x), f(x_p)>]_+ .
inline Tape::Id inter_loss(Tape& tape, Tape::Id f_x, Tape::Id f_xp,
                           Tape::Id f_xn) {
  auto sim_p = tape.cosine_similarity(f_x, f_xp);
  auto sim_n = tape.cosine_similarity(f_x, f_xn);
  return tape.relu(tape.sub(sim_n, sim_p));
}

inline double intra_loss(const Tensor& f_x, const Tensor& f_xp) {
  Tape tape;
  return tape.scalar(intra_loss(tape, tape.input(Tensor(f_x.shape, f_x.data)),
                                tape.input(Tensor(f_xp.shape, f_xp.data))));
}

inline double inter_loss(const Tensor& f_x, const Tensor& f_xp,
                         const Tensor& f_xn) {
  Tape tape;
  return tape.scalar(
      inter_loss(tape, tape.input(Tensor(f_x.shape, f_x.data)),
                 tape.input(Tensor(f_xp.shape, f_xp.data)),
                 tape.input(Tensor(f_xn.shape, f_xn.data))));
}

// Per-entry joint objective: CE through the model's head plus both pair
// terms, all on one tape so a single backward pass reaches the extractor,
// the head weights and tau together. Returns the component ids so callers
// can log forward values.
struct EntryLoss {
  Tape::Id total;
  Tape::Id ce;
  Tape::Id intra;
  Tape::Id inter;
};

inline EntryLoss total_loss_entry(Tape& tape, const Model& model,
                                  const Model::Bound& bound,
                                  std::span<const double> x, int label,
                                  const PairedExample& pos,
                                  const PairedExample& neg) {
  auto fx = model.features(
      tape, bound, tape.input(Tensor::from_vector({x.begin(), x.end()})));
  auto ce = tape.softmax_cross_entropy(model.logits(tape, bound, fx),
                                       static_cast<std::size_t>(label));
  auto fp = model.features(tape, bound,
                           tape.input(Tensor::from_vector(pos.features)));
  auto fn = model.features(tape, bound,
                           tape.input(Tensor::from_vector(neg.features)));
  auto li = intra_loss(tape, fx, fp);
  auto le = inter_loss(tape, fx, fp, fn);
  auto total = tape.add(tape.add(ce, li), le);
  return {total, ce, li, le};
}

// Value-level convenience over one (anchor, pair) entry.
inline double total_loss(std::span<const double> x, int label,
                         const PairedExample& pos, const PairedExample& neg,
                         Model& model) {
  Tape tape;
  auto bound = model.bind(tape, false);
  return tape.scalar(
      total_loss_entry(tape, model, bound, x, label, pos, neg).total);
}

}  // namespace heavytail
