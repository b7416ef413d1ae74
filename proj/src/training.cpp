#include "cardio/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace cardio {

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error("train config: batch size must be at least 1");
  if (max_epochs == 0) throw Error("train config: max epochs must be at least 1");
  if (patience > max_epochs) throw Error("train config: patience exceeds max epochs");
  if (seeds.empty()) throw Error("train config: at least one seed is required");
  if (!(learning_rate >= 0.0)) throw Error("train config: learning rate must be non-negative");
  if (eval_batch_size == 0) throw Error("train config: eval batch size must be at least 1");
}

template <typename T>
AdamState<T> AdamState<T>::zeros(const ParameterStore<T>& store) {
  AdamState s;
  for (const auto& e : store.entries()) {
    const bool trainable = e.kind == ParamKind::trainable;
    s.m.push_back(trainable ? Tensor<T>(e.value.shape()) : Tensor<T>());
    s.v.push_back(trainable ? Tensor<T>(e.value.shape()) : Tensor<T>());
  }
  return s;
}

template <typename T>
void adam_step(ParameterStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const TrainConfig& config) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() ||
      state.v.size() != entries.size()) {
    throw Error("adam_step: gradients or moments do not match the parameter store");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].kind != ParamKind::trainable) continue;
    if (grads[i].shape() != entries[i].value.shape()) {
      throw ShapeError("adam_step: gradient of '" + entries[i].name + "' has shape " +
                       shape_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient for '" + entries[i].name + "'");
    }
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = config.learning_rate;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].kind != ParamKind::trainable) continue;
    T* theta = entries[i].value.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t j = 0; j < entries[i].value.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      theta[j] = static_cast<T>(theta[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + config.epsilon));
    }
  }
}

bool EarlyStopping::update(double score) {
  ++epochs_;
  if (score > best_) {
    best_ = score;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

std::vector<EvalRecord> predict_records(const Cardioformer<float>& model, ParameterStore<float>& params,
                                        const std::vector<Sample>& samples, std::size_t batch_size) {
  std::vector<EvalRecord> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.resize(std::min(batch_size, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto probs = softmax_rows(model.predict(params, stack_windows<float>(samples, idx)));
    for (std::size_t b = 0; b < idx.size(); ++b) out.push_back({samples[idx[b]].label, probs[b]});
  }
  return out;
}

void check_subject_disjoint(const std::vector<Sample>& a, const std::vector<Sample>& b) {
  std::set<std::string> subjects;
  for (const auto& s : a) subjects.insert(s.subject);
  for (const auto& s : b) {
    if (subjects.count(s.subject)) {
      throw Error("subject overlap: subject '" + s.subject +
                  "' appears in both training and validation data");
    }
  }
}

std::vector<Sample> select_samples(const std::vector<Sample>& samples,
                                   const std::vector<std::size_t>& indices) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(samples.at(i));
  return out;
}

TrainResult train_loop(const ModelConfig& model_config, const std::vector<Sample>& train,
                       const std::vector<Sample>& val, const TrainConfig& config, std::uint64_t seed,
                       const TrainHooks& hooks) {
  config.validate();
  if (train.empty() || val.empty()) throw Error("train_loop: training and validation sets must be non-empty");
  check_subject_disjoint(train, val);
  std::set<int> labels;
  for (const auto& s : train) labels.insert(s.label);
  if (labels.size() < 2) throw Error("degenerate label distribution: training set has a single class");

  const Cardioformer<float> model(model_config);
  ParameterStore<float> params = model.init_parameters(seed);
  AdamState<float> adam = AdamState<float>::zeros(params);
  Rng rng(seed);
  EarlyStopping stopper(config.patience);

  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> batch_labels;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, n);
      batch_labels.clear();
      for (std::size_t i : batch) batch_labels.push_back(train[i].label);

      Graph<float> graph;
      ParameterBinding<float> binding(graph, params);
      Var<float> logits = model.forward(binding, stack_windows<float>(train, batch), Mode::train, &rng);
      Var<float> loss = cross_entropy(logits, std::span<const int>(batch_labels));
      graph.backward(loss);
      adam_step(params, binding.gradients(), adam, config);
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(n);
    }

    EpochRecord record{epoch, loss_sum / static_cast<double>(train.size()), 0.0};
    record.val_f1 = confusion_metrics(predict_records(model, params, val, config.eval_batch_size)).f1;
    if (hooks.val_f1_override) record.val_f1 = hooks.val_f1_override(epoch, record.val_f1);
    result.history.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);

    if (stopper.update(record.val_f1)) {
      result.best.config = model_config;
      result.best.parameters = params;
      result.best.state = TrainingMetadata{epoch, record.val_f1, seed, adam.step};
      result.best.adam_m = adam.m;
      result.best.adam_v = adam.v;
    }
    if (stopper.should_stop()) break;
  }
  return result;
}

MultiSeedReport multi_seed_run(const ModelConfig& model_config, const Dataset& data,
                               const TrainConfig& config,
                               const std::function<void(const SeedRun&)>& on_seed) {
  config.validate();
  MultiSeedReport report;
  std::vector<MetricSet> per_seed;
  std::vector<std::string> subjects;
  for (const auto& s : data.samples) subjects.push_back(s.subject);
  for (std::uint64_t seed : config.seeds) {
    SeedRun run;
    run.seed = seed;
    run.split = subject_split(subjects, config.split_seed);
    const auto part = [&](Partition p) {
      return select_samples(data.samples, run.split.sample_indices(data.samples, p));
    };
    const auto train = part(Partition::train);
    const auto val = part(Partition::validation);
    const auto test = part(Partition::test);
    run.result = train_loop(model_config, train, val, config, seed);
    const Cardioformer<float> model(model_config);
    run.test = evaluate_records(predict_records(model, run.result.best.parameters, test, config.eval_batch_size));
    per_seed.push_back(run.test);
    if (on_seed) on_seed(run);
    report.runs.push_back(std::move(run));
  }
  report.summary = aggregate(per_seed);
  return report;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterStore<float>&, const std::vector<Tensor<float>>&, AdamState<float>&,
                        const TrainConfig&);
template void adam_step(ParameterStore<double>&, const std::vector<Tensor<double>>&, AdamState<double>&,
                        const TrainConfig&);

}  // namespace cardio
