#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "heavytail/autodiff.hpp"
#include "heavytail/dataset.hpp"
#include "heavytail/errors.hpp"
#include "heavytail/losses.hpp"
#include "heavytail/model.hpp"
#include "heavytail/rng.hpp"
#include "heavytail/sampler.hpp"

namespace heavytail {

enum class Method { BaselineCe, Ros, Rus, Ours };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::BaselineCe: return "baseline_ce";
    case Method::Ros: return "ros";
    case Method::Rus: return "rus";
    case Method::Ours: return "ours";
  }
  throw ParameterError("method_name: unknown method");
}

inline Method method_from_name(const std::string& name) {
  if (name == "baseline_ce") return Method::BaselineCe;
  if (name == "ros") return Method::Ros;
  if (name == "rus") return Method::Rus;
  if (name == "ours") return Method::Ours;
  throw ConfigError("unknown method '" + name + "'");
}

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double momentum = 0.0;      // exposed, off by default
  double weight_decay = 0.0;  // exposed, off by default
  std::uint64_t seed = 1;
  Method method = Method::Ours;
  // Component toggles, honored when method == Ours (ablation arms).
  bool eis = true;
  bool cn = true;
  bool iloss = true;
  PartitionRule partition_rule = PartitionRule::CountThreshold;
  std::size_t partition_threshold = 0;  // 0 = geometric mean of N_min, N_max
  AugmentParams aug{};
  double pair_fallback_lambda_min = 0.9;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 32;
  bool clamp_tau = false;
  std::string label;  // optional run label; defaults to the method name

  std::string method_label() const {
    return label.empty() ? method_name(method) : label;
  }
};

// Per-epoch trace. `threshold` always carries the schedule value for the
// epoch; sampling consults it only when EIS is active.
struct EpochRecord {
  std::size_t epoch = 0;
  long long threshold = 0;
  double ce = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double tau = 0.0;  // 0 for linear-head runs
  double lr = 0.0;
};

struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;

  void to_jsonl(std::ostream& out) const {
    for (const auto& e : epochs) {
      nlohmann::json j;
      j["method"] = method;
      j["seed"] = seed;
      j["epoch"] = e.epoch;
      j["threshold"] = e.threshold;
      j["ce"] = e.ce;
      j["intra"] = e.intra;
      j["inter"] = e.inter;
      j["tau"] = e.tau;
      j["lr"] = e.lr;
      out << j.dump() << "\n";
    }
  }

  std::string to_jsonl() const {
    std::ostringstream os;
    to_jsonl(os);
    return os.str();
  }

  static RunRecord from_jsonl(std::istream& in) {
    RunRecord rec;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
      }
      rec.method = j.at("method").get<std::string>();
      rec.seed = j.at("seed").get<std::uint64_t>();
      EpochRecord e;
      e.epoch = j.at("epoch").get<std::size_t>();
      e.threshold = j.at("threshold").get<long long>();
      e.ce = j.at("ce").get<double>();
      e.intra = j.at("intra").get<double>();
      e.inter = j.at("inter").get<double>();
      e.tau = j.at("tau").get<double>();
      e.lr = j.at("lr").get<double>();
      rec.epochs.push_back(e);
    }
    return rec;
  }
};

inline void save_run_record(const RunRecord& rec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_run_record: cannot open " + path);
  rec.to_jsonl(out);
}

inline RunRecord load_run_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_run_record: cannot open " + path);
  return RunRecord::from_jsonl(in);
}

// Cosine-decayed learning rate, stepped per epoch.
inline double cosine_lr(double lr0, std::size_t epoch, std::size_t total) {
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                         static_cast<double>(total)));
}

// ---- naive resampling baselines ------------------------------------------------

// Random over-sampling: every class keeps all originals and repeats draws
// with replacement up to N_max. No augmentation.
inline std::vector<std::size_t> ros_epoch(const LongTailDataset& ds,
                                          Rng& rng) {
  const std::size_t target = ds.n_max();
  std::vector<std::size_t> out;
  out.reserve(target * ds.num_classes());
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    const auto& ids = ds.class_index(c);
    if (ids.empty()) {
      throw ParameterError("ros_epoch: class " + std::to_string(c) +
                           " has no instances");
    }
    for (std::size_t id : ids) out.push_back(id);
    for (std::size_t k = ids.size(); k < target; ++k) {
      out.push_back(ids[rng.uniform_index(ids.size())]);
    }
  }
  return out;
}

// Random under-sampling: N_min distinct examples per class.
inline std::vector<std::size_t> rus_epoch(const LongTailDataset& ds,
                                          Rng& rng) {
  const std::size_t target = ds.n_min();
  std::vector<std::size_t> out;
  out.reserve(target * ds.num_classes());
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    const auto& ids = ds.class_index(c);
    if (ids.empty()) {
      throw ParameterError("rus_epoch: class " + std::to_string(c) +
                           " has no instances");
    }
    std::vector<std::size_t> pool = ids;
    for (std::size_t k = 0; k < target; ++k) {
      const std::size_t j = k + rng.uniform_index(pool.size() - k);
      std::swap(pool[k], pool[j]);
      out.push_back(pool[k]);
    }
  }
  return out;
}

// ---- training loop ----------------------------------------------------------

struct TrainResult {
  Model model;
  RunRecord record;
};

struct EpochSummary {
  std::size_t epoch = 0;
  long long threshold = 0;
  std::size_t num_samples = 0;
  double mean_ce = 0.0;
  double mean_intra = 0.0;
  double mean_inter = 0.0;
  double tau = 0.0;
  double lr = 0.0;
};

using EpochObserver = std::function<void(const EpochSummary&)>;

namespace detail {

struct TrainSample {
  std::vector<double> features;
  int label;
  std::size_t source_id;
  bool augmented;
};

constexpr std::uint64_t kSamplerStream = 0x73616d70ull;  // "samp"
constexpr std::uint64_t kEpochStream = 0x65706f63ull;    // "epoc"

}  // namespace detail

// Validates configuration before any work starts, then runs the
// single-stage loop: sample the epoch, shuffle, iterate minibatches,
// build pairs against the full dataset, backward once, SGD step.
inline TrainResult train(const LongTailDataset& ds, const TrainConfig& cfg,
                         const EpochObserver& observer = {}) {
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (ds.empty()) throw ConfigError("train: empty dataset");

  bool eis = false, cn = false, iloss = false;
  if (cfg.method == Method::Ours) {
    eis = cfg.eis;
    cn = cfg.cn;
    iloss = cfg.iloss;
  }
  // Pair terms need at least two classes; a one-class problem trains on
  // cross-entropy alone.
  if (ds.num_classes() < 2) iloss = false;

  const bool needs_full_classes =
      eis || cfg.method == Method::Ros || cfg.method == Method::Rus;
  if (needs_full_classes) {
    for (std::size_t c = 0; c < ds.num_classes(); ++c) {
      if (ds.count(c) == 0) {
        throw ConfigError("train: class " + std::to_string(c) +
                          " has no instances; resampling methods need every "
                          "class populated");
      }
    }
  }

  std::optional<HeadTailPartition> part;
  if (iloss) {
    std::size_t k = cfg.partition_threshold;
    if (cfg.partition_rule == PartitionRule::CountThreshold && k == 0) {
      k = static_cast<std::size_t>(std::llround(
          std::sqrt(static_cast<double>(ds.n_min()) *
                    static_cast<double>(ds.n_max()))));
    }
    part = partition_head_tail(ds, cfg.partition_rule, k);
  }

  Model model(ds.feature_dim(), cfg.hidden_dim, cfg.embed_dim,
              ds.num_classes(), cn ? HeadKind::Cosine : HeadKind::Linear,
              cfg.seed, cfg.clamp_tau);
  auto params = model.params();
  SgdState sgd_state;
  const SamplerSchedule schedule =
      SamplerSchedule::for_dataset(ds, cfg.epochs);
  const std::uint64_t sampler_seed =
      derive_seed(cfg.seed, {detail::kSamplerStream});

  RunRecord record;
  record.method = cfg.method_label();
  record.seed = cfg.seed;
  record.epochs.reserve(cfg.epochs);

  Tape tape;
  for (std::size_t t = 0; t < cfg.epochs; ++t) {
    const double lr_t = cosine_lr(cfg.lr, t, cfg.epochs);
    // Algorithm epochs are 1-based: the final epoch sees the full dataset.
    const std::size_t t_i = t + 1;
    const long long threshold = schedule.threshold(t_i);
    Rng epoch_rng(derive_seed(cfg.seed, {detail::kEpochStream, t}));

    std::vector<detail::TrainSample> samples;
    if (eis) {
      const EpochPlan plan = compose_epoch(ds, schedule, t_i, sampler_seed);
      samples.reserve(plan.total_entries());
      for (const auto& cls : plan.per_class) {
        for (const auto& entry : cls) {
          const auto& ex = ds.example(entry.example_id);
          if (entry.is_augmented) {
            const auto& background =
                ds.example(epoch_rng.uniform_index(ds.size()));
            LabeledExample mixed = augment(ex, background, epoch_rng, cfg.aug);
            samples.push_back({std::move(mixed.features), mixed.label,
                               entry.example_id, true});
          } else {
            samples.push_back({ex.features, ex.label, entry.example_id,
                               false});
          }
        }
      }
    } else if (cfg.method == Method::Ros || cfg.method == Method::Rus) {
      const auto ids = cfg.method == Method::Ros ? ros_epoch(ds, epoch_rng)
                                                 : rus_epoch(ds, epoch_rng);
      samples.reserve(ids.size());
      for (std::size_t id : ids) {
        const auto& ex = ds.example(id);
        samples.push_back({ex.features, ex.label, id, false});
      }
    } else {
      samples.reserve(ds.size());
      for (std::size_t id = 0; id < ds.size(); ++id) {
        const auto& ex = ds.example(id);
        samples.push_back({ex.features, ex.label, id, false});
      }
    }
    epoch_rng.shuffle(samples);

    double ce_sum = 0.0, intra_sum = 0.0, inter_sum = 0.0;
    for (std::size_t start = 0; start < samples.size();
         start += cfg.batch_size) {
      const std::size_t stop =
          std::min(samples.size(), start + cfg.batch_size);
      tape.clear();
      auto bound = model.bind(tape, true);

      PairBatch pairs;
      if (iloss) {
        std::vector<AnchorRef> anchors;
        anchors.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) {
          anchors.push_back({samples[i].source_id, samples[i].label});
        }
        AugmentParams fallback = cfg.aug;
        fallback.lambda_min = cfg.pair_fallback_lambda_min;
        pairs = build_pairs(anchors, ds, *part, epoch_rng, fallback);
      }

      std::vector<Tape::Id> entry_losses;
      entry_losses.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = samples[i];
        if (iloss) {
          const auto entry = total_loss_entry(
              tape, model, bound, s.features, s.label,
              pairs.positives[i - start], pairs.negatives[i - start]);
          ce_sum += tape.scalar(entry.ce);
          intra_sum += tape.scalar(entry.intra);
          inter_sum += tape.scalar(entry.inter);
          entry_losses.push_back(entry.total);
        } else {
          auto fx = model.features(
              tape, bound, tape.input(Tensor::from_vector(s.features)));
          auto ce = tape.softmax_cross_entropy(
              model.logits(tape, bound, fx),
              static_cast<std::size_t>(s.label));
          ce_sum += tape.scalar(ce);
          entry_losses.push_back(ce);
        }
      }
      auto batch_loss = tape.mean_of(entry_losses);
      for (Tensor* p : params) p->zero_grad();
      tape.backward(batch_loss);
      sgd_step(params, lr_t, cfg.momentum, cfg.weight_decay, &sgd_state);
      model.clamp_tau_if_enabled();
    }

    const double n = static_cast<double>(samples.size());
    EpochRecord er;
    er.epoch = t_i;
    er.threshold = threshold;
    er.ce = ce_sum / n;
    er.intra = intra_sum / n;
    er.inter = inter_sum / n;
    er.tau = cn ? model.tau() : 0.0;
    er.lr = lr_t;
    record.epochs.push_back(er);
    if (observer) {
      observer({t_i, threshold, samples.size(), er.ce, er.intra, er.inter,
                er.tau, lr_t});
    }
  }
  return {std::move(model), std::move(record)};
}

}  // namespace heavytail
