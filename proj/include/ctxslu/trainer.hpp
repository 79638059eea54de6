#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ctxslu/dli.hpp"
#include "ctxslu/instances.hpp"
#include "ctxslu/metrics.hpp"
#include "ctxslu/model.hpp"
#include "ctxslu/params.hpp"
#include "ctxslu/rng.hpp"
#include "ctxslu/tape.hpp"

namespace ctxslu {

struct TrainConfig {
  int batch_size = 64;
  int max_epochs = 30;
  int patience = 5;        // epochs without improvement before stopping; <= 0 disables
  double lambda = 0.3;     // joint-loss mixing weight
  double dropout = 0.3;
  int embedding_dim = 100;
  int hidden_dim = 64;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global-norm gradient clip; <= 0 disables
  uint64_t seed = 1;
  SluVariant variant = SluVariant::SdenDagger;
  bool dli_enabled = false;

  void validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must lie in [0,1]");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be positive");
    if (embedding_dim < 1 || hidden_dim < 1) {
      throw std::invalid_argument("model dimensions must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must lie in [0,1)");
    if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (dli_enabled && variant == SluVariant::NoMem) {
      throw std::invalid_argument(
          "the nomem variant has no context knowledge, so the next-utterance task cannot run");
    }
  }

  double effective_lambda() const { return dli_enabled ? lambda : 0.0; }
};

inline ModelConfig model_config_from(const TrainConfig& t, int vocab_size, int n_intents,
                                     int n_slot_labels) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.n_intents = n_intents;
  m.n_slot_labels = n_slot_labels;
  m.embedding_dim = t.embedding_dim;
  m.hidden_dim = t.hidden_dim;
  m.dropout = t.dropout;
  m.variant = t.variant;
  return m;
}

// L = (1 - lambda) * L_SLU + lambda * L_DLI
inline double joint_loss(double l_slu, double l_dli, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must lie in [0,1]");
  return (1.0 - lambda) * l_slu + lambda * l_dli;
}

inline Var joint_loss(Tape& t, Var l_slu, Var l_dli, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must lie in [0,1]");
  return t.add(t.scale(l_slu, 1.0 - lambda), t.scale(l_dli, lambda));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class AdamState {
 public:
  explicit AdamState(const ParameterStore& store) {
    m_.reserve(static_cast<size_t>(store.count()));
    v_.reserve(static_cast<size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i) {
      m_.emplace_back(store.value(i).shape);
      v_.emplace_back(store.value(i).shape);
    }
  }

  int steps() const { return steps_; }
  const Tensor& first_moment(int i) const { return m_[static_cast<size_t>(i)]; }
  const Tensor& second_moment(int i) const { return v_[static_cast<size_t>(i)]; }

  // One bias-corrected update from the store's gradient accumulators.
  void step(ParameterStore& store, double lr, double beta1, double beta2, double eps) {
    if (static_cast<size_t>(store.count()) != m_.size()) {
      throw std::invalid_argument("optimizer state does not match the parameter store");
    }
    ++steps_;
    double bc1 = 1.0 - std::pow(beta1, steps_);
    double bc2 = 1.0 - std::pow(beta2, steps_);
    for (int i = 0; i < store.count(); ++i) {
      Tensor& theta = store.value(i);
      const Tensor& g = store.grad(i);
      Tensor& m = m_[static_cast<size_t>(i)];
      Tensor& v = v_[static_cast<size_t>(i)];
      for (size_t k = 0; k < theta.data.size(); ++k) {
        double gk = g.data[k];
        m.data[k] = beta1 * m.data[k] + (1.0 - beta1) * gk;
        v.data[k] = beta2 * v.data[k] + (1.0 - beta2) * gk * gk;
        double mhat = m.data[k] / bc1;
        double vhat = v.data[k] / bc2;
        theta.data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  std::vector<Tensor> m_, v_;
  int steps_ = 0;
};

inline void adam_step(ParameterStore& store, AdamState& state, const TrainConfig& cfg) {
  state.step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

// Scales all gradient accumulators so their global L2 norm is at most
// max_norm; returns the pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_global_norm(ParameterStore& store, double max_norm) {
  double norm = store.grad_norm();
  if (max_norm > 0.0 && norm > max_norm) store.scale_grads(max_norm / norm);
  return norm;
}

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

// Patience rule on validation loss: training stops once the loss has failed
// to improve (strictly) for `patience` consecutive epochs, or at max_epochs.
class EarlyStopping {
 public:
  EarlyStopping(int patience, int max_epochs) : patience_(patience), max_epochs_(max_epochs) {}

  // Records one epoch's validation loss; returns true if it is a new best.
  bool observe(double val_loss) {
    ++epoch_;
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch_;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const {
    if (epoch_ >= max_epochs_) return true;
    return patience_ > 0 && since_best_ >= patience_;
  }

  int epoch() const { return epoch_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int max_epochs_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Dataset-level loss and evaluation
// ---------------------------------------------------------------------------

// Mean per-example SLU loss and mean per-group DLI loss over a dataset,
// combined with the given lambda; evaluation mode (no dropout).
inline double dataset_loss(const SluModel& model, const std::vector<TrainExample>& examples,
                           double lambda) {
  if (examples.empty()) throw std::invalid_argument("dataset_loss over an empty set");
  double slu_sum = 0.0, dli_sum = 0.0;
  long long groups = 0;
  for (const TrainExample& ex : examples) {
    Tape t(&model.store());
    SluModel::Forward f = model.forward(t, ex.slu, /*train=*/false, nullptr);
    slu_sum += t.value(model.slu_loss(t, f, ex.slu)).data[0];
    if (lambda > 0.0 && ex.dli) {
      Var l = dli_group_loss(t, model, f.memories, *ex.dli, f.knowledge, false, nullptr);
      dli_sum += t.value(l).data[0];
      ++groups;
    }
  }
  double slu_mean = slu_sum / static_cast<double>(examples.size());
  double dli_mean = groups > 0 ? dli_sum / static_cast<double>(groups) : 0.0;
  return joint_loss(slu_mean, dli_mean, lambda);
}

struct EvalReport {
  SlotEval slot;
  double intent_acc = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json per_type = nlohmann::json::object();
    for (const auto& [type, c] : slot.per_type) {
      Prf m = make_prf(c.correct, c.predicted, c.gold);
      per_type[type] = {{"p", m.p},          {"r", m.r},
                        {"f1", m.f1},        {"gold", c.gold},
                        {"pred", c.predicted}, {"correct", c.correct}};
    }
    return nlohmann::json{
        {"slot",
         {{"p", slot.micro.p},
          {"r", slot.micro.r},
          {"f1", slot.micro.f1},
          {"macro_f1", slot.macro_f1},
          {"token_p", slot.token.p},
          {"token_r", slot.token.r},
          {"token_f1", slot.token.f1},
          {"degenerate", slot.micro.degenerate}}},
        {"intent_acc", intent_acc},
        {"per_slot_type", std::move(per_type)},
        {"n_utterances", slot.n_utterances}};
  }
};

// Greedy decoding over the set; chunk metrics computed on tag strings.
inline EvalReport evaluate_dataset(const SluModel& model,
                                   const std::vector<TrainExample>& examples,
                                   const std::vector<std::string>& slot_labels) {
  if (examples.empty()) throw std::invalid_argument("evaluate_dataset over an empty set");
  std::vector<std::vector<std::string>> pred_tags, gold_tags;
  std::vector<int> pred_intents, gold_intents;
  pred_tags.reserve(examples.size());
  gold_tags.reserve(examples.size());
  auto tag_name = [&](int id) -> const std::string& {
    if (id < 0 || id >= static_cast<int>(slot_labels.size())) {
      throw std::out_of_range("slot label id out of range");
    }
    return slot_labels[static_cast<size_t>(id)];
  };
  for (const TrainExample& ex : examples) {
    SluModel::Prediction p = model.predict(ex.slu);
    std::vector<std::string> pt, gt;
    pt.reserve(p.slot_tags.size());
    gt.reserve(ex.slu.slot_tags.size());
    for (int id : p.slot_tags) pt.push_back(tag_name(id));
    for (int id : ex.slu.slot_tags) gt.push_back(tag_name(id));
    pred_tags.push_back(std::move(pt));
    gold_tags.push_back(std::move(gt));
    pred_intents.push_back(p.intent);
    gold_intents.push_back(ex.slu.intent);
  }
  EvalReport r;
  r.slot = slot_prf(pred_tags, gold_tags);
  r.intent_acc = intent_accuracy(pred_intents, gold_intents);
  return r;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double slot_p = 0.0;
  double slot_r = 0.0;
  double slot_f1 = 0.0;
  double intent_acc = 0.0;
};

inline nlohmann::json epoch_metrics_json(const EpochMetrics& m) {
  return nlohmann::json{{"epoch", m.epoch},     {"train_loss", m.train_loss},
                        {"val_loss", m.val_loss}, {"slot_p", m.slot_p},
                        {"slot_r", m.slot_r},   {"slot_f1", m.slot_f1},
                        {"intent_acc", m.intent_acc}};
}

struct FitResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// Joint training with Adam and patience-based early stopping on validation
// loss. On return the model's parameters hold the best-validation-loss epoch.
//
// Per batch of B examples (G of them carrying a candidate group), the loss is
//   sum_i (1-lambda)/B * L_SLU_i  +  sum_g lambda/G * L_DLI_g,
// i.e. L_SLU averaged over examples and L_DLI averaged over groups; lambda is
// forced to 0 when the auxiliary task is disabled.
inline FitResult fit(SluModel& model, const std::vector<TrainExample>& train,
                     const std::vector<TrainExample>& dev, const TrainConfig& cfg,
                     const std::vector<std::string>& slot_labels,
                     const std::function<void(const EpochMetrics&)>& on_epoch = nullptr) {
  cfg.validate();
  if (train.empty() || dev.empty()) {
    throw std::invalid_argument("fit needs non-empty train and dev sets");
  }
  ParameterStore& store = model.store();
  const double lambda = cfg.effective_lambda();
  AdamState adam(store);
  EarlyStopping stopper(cfg.patience, cfg.max_epochs);
  RngState rng(cfg.seed);

  std::vector<size_t> idx(train.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  FitResult result;
  std::vector<Tensor> best_params = store.snapshot();

  while (!stopper.should_stop()) {
    rng.shuffle(idx);
    double slu_sum = 0.0, dli_sum = 0.0;
    long long group_count = 0;

    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(idx.size(), start + static_cast<size_t>(cfg.batch_size));
      double batch = static_cast<double>(end - start);
      long long batch_groups = 0;
      if (lambda > 0.0) {
        for (size_t i = start; i < end; ++i) batch_groups += train[idx[i]].dli ? 1 : 0;
      }
      store.zero_grads();
      for (size_t i = start; i < end; ++i) {
        const TrainExample& ex = train[idx[i]];
        Tape t(&store);
        SluModel::Forward f = model.forward(t, ex.slu, /*train=*/true, &rng);
        Var l_slu = model.slu_loss(t, f, ex.slu);
        slu_sum += t.value(l_slu).data[0];
        Var node = t.scale(l_slu, (1.0 - lambda) / batch);
        if (lambda > 0.0 && ex.dli) {
          Var l_dli = dli_group_loss(t, model, f.memories, *ex.dli, f.knowledge, true, &rng);
          dli_sum += t.value(l_dli).data[0];
          ++group_count;
          node = t.add(node, t.scale(l_dli, lambda / static_cast<double>(batch_groups)));
        }
        t.backward(node);
      }
      clip_global_norm(store, cfg.clip_norm);
      adam_step(store, adam, cfg);
      if (!store.values_finite()) {
        throw std::runtime_error("training produced non-finite parameters");
      }
    }

    EpochMetrics m;
    m.epoch = stopper.epoch() + 1;
    double slu_mean = slu_sum / static_cast<double>(train.size());
    double dli_mean = group_count > 0 ? dli_sum / static_cast<double>(group_count) : 0.0;
    m.train_loss = joint_loss(slu_mean, dli_mean, lambda);
    m.val_loss = dataset_loss(model, dev, lambda);
    EvalReport ev = evaluate_dataset(model, dev, slot_labels);
    m.slot_p = ev.slot.micro.p;
    m.slot_r = ev.slot.micro.r;
    m.slot_f1 = ev.slot.micro.f1;
    m.intent_acc = ev.intent_acc;
    result.history.push_back(m);

    if (stopper.observe(m.val_loss)) best_params = store.snapshot();
    if (on_epoch) on_epoch(m);
  }

  store.restore(best_params);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

// ---------------------------------------------------------------------------
// Lambda sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double lambda = 0.0;
  uint64_t seed = 0;
  double slot_f1 = 0.0;
  double intent_acc = 0.0;
};

struct SweepAggregate {
  double lambda = 0.0;
  double mean_slot_f1 = 0.0;
  double mean_intent_acc = 0.0;
  int runs = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;             // (lambda, seed) order
  std::vector<SweepAggregate> aggregates; // lambda order
};

// One full training run per (lambda, seed); rows come back in deterministic
// (lambda, seed) order regardless of how many worker threads execute them.
inline SweepResult lambda_sweep(const TrainConfig& base, int vocab_size, int n_intents,
                                int n_slot_labels, const std::vector<double>& lambdas,
                                const std::vector<uint64_t>& seeds,
                                const std::vector<TrainExample>& train,
                                const std::vector<TrainExample>& dev,
                                const std::vector<std::string>& slot_labels, int jobs = 1) {
  for (double l : lambdas) {
    if (l < 0.0 || l > 1.0) throw std::invalid_argument("lambda must lie in [0,1]");
  }
  SweepResult result;
  if (lambdas.empty() || seeds.empty()) return result;
  result.rows.resize(lambdas.size() * seeds.size());

  auto run_one = [&](size_t flat) {
    size_t li = flat / seeds.size();
    size_t si = flat % seeds.size();
    TrainConfig cfg = base;
    cfg.lambda = lambdas[li];
    cfg.seed = seeds[si];
    ParameterStore store(cfg.seed);
    SluModel model(store, model_config_from(cfg, vocab_size, n_intents, n_slot_labels));
    fit(model, train, dev, cfg, slot_labels);
    EvalReport ev = evaluate_dataset(model, dev, slot_labels);
    result.rows[flat] = SweepRow{cfg.lambda, cfg.seed, ev.slot.micro.f1, ev.intent_acc};
  };

  size_t total = result.rows.size();
  int workers = std::max(1, std::min<int>(jobs, static_cast<int>(total)));
  if (workers == 1) {
    for (size_t i = 0; i < total; ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (size_t i = next.fetch_add(1); i < total; i = next.fetch_add(1)) run_one(i);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (size_t li = 0; li < lambdas.size(); ++li) {
    SweepAggregate agg;
    agg.lambda = lambdas[li];
    agg.runs = static_cast<int>(seeds.size());
    for (size_t si = 0; si < seeds.size(); ++si) {
      const SweepRow& r = result.rows[li * seeds.size() + si];
      agg.mean_slot_f1 += r.slot_f1;
      agg.mean_intent_acc += r.intent_acc;
    }
    agg.mean_slot_f1 /= static_cast<double>(seeds.size());
    agg.mean_intent_acc /= static_cast<double>(seeds.size());
    result.aggregates.push_back(agg);
  }
  return result;
}

}  // namespace ctxslu
