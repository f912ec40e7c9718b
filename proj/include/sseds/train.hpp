#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <thread>
#include <vector>

#include "sseds/adam.hpp"
#include "sseds/dataio.hpp"
#include "sseds/eval.hpp"
#include "sseds/model.hpp"

namespace sseds {

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 2048;
  AdamConfig adam;
  std::uint64_t seed = 0;  // epoch e shuffles with stage_seed(seed, e)
  bool shuffle = true;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per record
  double valid_auc = std::numeric_limits<double>::quiet_NaN();
  double valid_logloss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::vector<EpochMetrics> epochs;
  std::uint64_t forward_backward_passes = 0;
};

/// Click probabilities for every record, in dataset order. Batches are spread
/// over worker_count() threads; each batch writes its own slice.
template <typename Scalar>
std::vector<double> predict(const Model<Scalar>& model, const Dataset& data, std::size_t batch_size = 4096) {
  std::vector<double> out(data.size());
  BatchPlan plan(data, batch_size, 0, false);
  const std::size_t workers = std::min<std::size_t>(worker_count(), std::max<std::size_t>(plan.size(), 1));
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      for (std::size_t k = w; k < plan.size(); k += workers) {
        auto tr = forward(model, plan[k]);
        for (Index r = 0; r < tr.probs.size(); ++r)
          out[k * batch_size + static_cast<std::size_t>(r)] = static_cast<double>(tr.probs(r));
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct Evaluation {
  double auc = std::numeric_limits<double>::quiet_NaN();
  double logloss = std::numeric_limits<double>::quiet_NaN();
};

/// AUC is NaN when the split is single-class; use auc() directly to get the error.
template <typename Scalar>
Evaluation evaluate(const Model<Scalar>& model, const Dataset& data) {
  Evaluation ev;
  if (data.size() == 0) return ev;
  auto p = predict(model, data);
  std::span<const std::uint8_t> labels(data.labels.data(), data.size());
  double total = 0.0;
  for (std::size_t r = 0; r < p.size(); ++r) total -= labels[r] ? std::log(p[r]) : std::log1p(-p[r]);
  ev.logloss = total / static_cast<double>(p.size());
  try {
    ev.auc = auc(p, labels);
  } catch (const DataError&) {
  }
  return ev;
}

/// Mini-batch training on the summed cross-entropy. Zero epochs leaves the
/// model untouched.
template <typename Scalar>
TrainLog fit(Model<Scalar>& model, const Dataset& train, const Dataset* valid, const TrainConfig& config,
             AdamState<Scalar>& state) {
  model.validate();
  TrainLog log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    BatchPlan plan(train, config.batch_size, stage_seed(config.seed, epoch), config.shuffle);
    double total = 0.0;
    for (std::size_t k = 0; k < plan.size(); ++k) {
      Batch batch = plan[k];
      auto trace = forward(model, batch);
      double l = loss(trace.probs, batch.labels);
      if (!std::isfinite(l)) throw NumericalError("non-finite training loss");
      total += l;
      auto grads = backward(model, batch, trace);
      ++log.forward_backward_passes;
      adam_step(model, grads, state);
    }
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.train_loss = train.size() ? total / static_cast<double>(train.size()) : 0.0;
    if (valid != nullptr) {
      auto ev = evaluate(model, *valid);
      em.valid_auc = ev.auc;
      em.valid_logloss = ev.logloss;
    }
    log.epochs.push_back(em);
  }
  return log;
}

/// Optimizes V and Theta from their current values; requires epochs >= 1.
template <typename Scalar>
TrainLog pretrain(Model<Scalar>& model, const Dataset& train, const Dataset& valid, const TrainConfig& config) {
  if (config.epochs < 1) throw UsageError("pretraining needs at least one epoch");
  auto state = make_adam_state(model, config.adam);
  return fit(model, train, &valid, config, state);
}

}  // namespace sseds
