#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "jointtag/corpus.hpp"
#include "jointtag/mathcore.hpp"
#include "jointtag/metrics.hpp"
#include "jointtag/network.hpp"
#include "jointtag/rng.hpp"

namespace jointtag {

// Gradients are shape-congruent with the parameters; reuse the container.
template <class T>
using Gradients = ModelParams<T>;

inline constexpr double kProbFloor = 1e-12;

// Mean negative log-likelihood over the unmasked positions of a batch.
template <class T>
double cross_entropy_loss_sum(const ForwardTrace<T>& trace, const BatchInput& in) {
  double sum = 0.0;
  for (std::size_t t = 0; t < in.steps; ++t)
    for (std::size_t b = 0; b < in.batch; ++b)
      if (in.valid(b, t)) {
        const double p =
            std::max(static_cast<double>(trace.probs[t](in.label(b, t), b)), kProbFloor);
        sum -= std::log(p);
      }
  return sum;
}

template <class T>
double cross_entropy_loss(const ForwardTrace<T>& trace, const BatchInput& in) {
  if (in.unmasked_count == 0)
    throw std::domain_error("cross_entropy_loss: no unmasked positions");
  return cross_entropy_loss_sum(trace, in) / static_cast<double>(in.unmasked_count);
}

// Sequence-of-vectors form used by tests and single-sequence callers.
template <class T>
double cross_entropy_loss(std::span<const Vec<T>> probs, std::span<const LabelId> labels,
                          std::span<const std::uint8_t> mask) {
  require_shape(probs.size() == labels.size() && labels.size() == mask.size(),
                "cross_entropy_loss: length mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (mask[t] == 0) continue;
    require_shape(labels[t] < probs[t].size(), "cross_entropy_loss: label out of range");
    sum -= std::log(std::max(static_cast<double>(probs[t][labels[t]]), kProbFloor));
    ++count;
  }
  if (count == 0) throw std::domain_error("cross_entropy_loss: no unmasked positions");
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Backpropagation through time over the batched forward trace. Returns the
// negative log-likelihood SUM over this batch; gradients are of the MEAN
// loss with `normalizer` unmasked positions (pass in.unmasked_count unless
// this batch is a slice of a larger one).
// ---------------------------------------------------------------------------
template <class T>
double backward(const ModelParams<T>& params, const ForwardTrace<T>& trace,
                const BatchInput& in, Gradients<T>& grads, std::size_t normalizer = 0) {
  const std::size_t hidden = params.dims.hidden_dim;
  const std::size_t layers = params.dims.stacks;
  const std::size_t batch = in.batch;
  const std::size_t steps = in.steps;
  const std::size_t classes = params.dims.num_classes;
  require_shape(trace.batch == batch && trace.steps == steps && trace.layers == layers,
                "backward: trace/batch mismatch");
  if (normalizer == 0) normalizer = in.unmasked_count;
  require_shape(normalizer > 0, "backward: empty mask");
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(normalizer));

  {  // reset to exact zero, keeping shapes
    auto gt = grads.flat_tensors();
    for (auto s : gt) std::fill(s.begin(), s.end(), T{});
  }

  // Head: softmax + cross-entropy. dLogits = (p - onehot(y)) / N at unmasked
  // positions, zero elsewhere. Split of d(concat) feeds the two stacks.
  double loss_sum = 0.0;
  std::vector<Mat<T>> d_top(2);  // per direction: hidden x batch for current t
  std::vector<std::vector<Mat<T>>> d_top_all(
      2, std::vector<Mat<T>>(steps));  // gradient on top-layer hidden per t
  Mat<T> d_logits(classes, batch);
  Mat<T> d_concat(2 * hidden, batch);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      const bool valid = in.valid(b, t);
      const LabelId y = in.label(b, t);
      if (valid) {
        const double p =
            std::max(static_cast<double>(trace.probs[t](y, b)), kProbFloor);
        loss_sum -= std::log(p);
      }
      for (std::size_t c = 0; c < classes; ++c) {
        if (!valid) {
          d_logits(c, b) = T{};
          continue;
        }
        const T delta = trace.probs[t](c, b) - (c == y ? T{1} : T{0});
        d_logits(c, b) = delta * inv_n;
      }
    }
    matmul_nt(grads.w_out, d_logits, trace.concat_hidden[t], /*accumulate=*/true);
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = static_cast<double>(grads.b_out[c]);
      const T* row = d_logits.a.data() + c * batch;
      for (std::size_t b = 0; b < batch; ++b) acc += static_cast<double>(row[b]);
      grads.b_out[c] = static_cast<T>(acc);
    }
    matmul_tn(d_concat, params.w_out, d_logits, /*accumulate=*/false);
    Mat<T> df(hidden, batch), db(hidden, batch);
    std::copy(d_concat.a.begin(), d_concat.a.begin() + hidden * batch, df.a.begin());
    std::copy(d_concat.a.begin() + hidden * batch, d_concat.a.end(), db.a.begin());
    d_top_all[kForwardDir][t] = std::move(df);
    d_top_all[kBackwardDir][t] = std::move(db);
  }

  const Mat<T> zero_state(hidden, batch);
  Mat<T> d_gate(hidden, batch);
  for (std::size_t dir = 0; dir < 2; ++dir) {
    const bool reversed = dir == kBackwardDir;
    std::vector<Mat<T>> dh_carry(layers, Mat<T>(hidden, batch));
    std::vector<Mat<T>> dc_carry(layers, Mat<T>(hidden, batch));
    for (std::size_t step_rev = 0; step_rev < steps; ++step_rev) {
      const std::size_t step_i = steps - 1 - step_rev;  // forward processing index
      const std::size_t t = reversed ? steps - 1 - step_i : step_i;
      Mat<T> d_from_above = d_top_all[dir][t];  // top layer first
      for (std::size_t layer_rev = 0; layer_rev < layers; ++layer_rev) {
        const std::size_t layer = layers - 1 - layer_rev;
        const auto& p = params.stacks[dir][layer];
        auto& g = grads.stacks[dir][layer];
        const auto& cell = trace.step(dir, layer, t);

        const Mat<T>* h_prev = &zero_state;
        const Mat<T>* c_prev = &zero_state;
        if (step_i > 0) {
          const auto& prev = trace.step(dir, layer, reversed ? t + 1 : t - 1);
          h_prev = &prev.hidden;
          c_prev = &prev.cell;
        }
        const Mat<T>* x = layer > 0 ? &trace.step(dir, layer - 1, t).hidden : nullptr;

        // Total gradient on the stored (post-mask) states, then mask to get
        // the gradient on the raw cell outputs.
        Mat<T> dh(hidden, batch), dc(hidden, batch);
        for (std::size_t k = 0; k < dh.a.size(); ++k) {
          dh.a[k] = d_from_above.a[k] + dh_carry[layer].a[k];
          dc.a[k] = dc_carry[layer].a[k];
        }
        detail::mask_columns(dh, in, t);
        detail::mask_columns(dc, in, t);

        // Gate-local derivatives.
        Mat<T> dz_forget(hidden, batch), dz_cand(hidden, batch);
        Mat<T> dz_ingate(hidden, batch), dz_outgate(hidden, batch);
        Mat<T>& dc_prev = dc_carry[layer];  // rewritten in place below
        for (std::size_t k = 0; k < dh.a.size(); ++k) {
          const T f = cell.forget.a[k];
          const T gq = cell.cand.a[k];
          const T ig = cell.ingate.a[k];
          const T o = cell.outgate.a[k];
          const T tc = cell.cell_tanh.a[k];
          const T d_hidden = dh.a[k];
          const T d_out = d_hidden * tc;
          T d_cell = dc.a[k] + d_hidden * o * (T{1} - tc * tc);
          const T d_new = d_cell;
          const T d_kept = d_cell;
          const T d_cand = d_new * ig;
          const T d_ingate = d_new * gq;
          const T d_forget = d_kept * c_prev->a[k];
          dc_prev.a[k] = d_kept * f;
          dz_forget.a[k] = d_forget * f * (T{1} - f);
          dz_cand.a[k] = d_cand * (T{1} - gq * gq);
          dz_ingate.a[k] = d_ingate * ig * (T{1} - ig);
          dz_outgate.a[k] = d_out * o * (T{1} - o);
        }

        // Parameter gradients and gradient flow to h_prev and the input.
        Mat<T>& dh_prev = dh_carry[layer];
        dh_prev.fill(T{});
        Mat<T> dx;
        if (layer > 0) dx = Mat<T>(hidden, batch);
        std::vector<std::uint32_t> col_ids;
        if (layer == 0) {
          col_ids.resize(batch);
          for (std::size_t b = 0; b < batch; ++b) col_ids[b] = in.id(b, t);
        }
        struct GateRef {
          const Mat<T>* dz;
          const Mat<T>* u;
          const Mat<T>* w;
          Mat<T>* gu;
          Mat<T>* gw;
        };
        const GateRef gates[4] = {
            {&dz_forget, &p.u_forget, &p.w_forget, &g.u_forget, &g.w_forget},
            {&dz_cand, &p.u_cand, &p.w_cand, &g.u_cand, &g.w_cand},
            {&dz_ingate, &p.u_ingate, &p.w_ingate, &g.u_ingate, &g.w_ingate},
            {&dz_outgate, &p.u_outgate, &p.w_outgate, &g.u_outgate, &g.w_outgate}};
        for (const auto& gate : gates) {
          matmul_nt(*gate.gu, *gate.dz, *h_prev, /*accumulate=*/true);
          matmul_tn(dh_prev, *gate.u, *gate.dz, /*accumulate=*/true);
          if (layer == 0) {
            scatter_add_columns(*gate.gw, *gate.dz,
                                std::span<const std::uint32_t>(col_ids));
          } else {
            matmul_nt(*gate.gw, *gate.dz, *x, /*accumulate=*/true);
            matmul_tn(dx, *gate.w, *gate.dz, /*accumulate=*/true);
          }
        }
        if (layer > 0) d_from_above = std::move(dx);
      }
    }
  }
  return loss_sum;
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Moments are shape-congruent parameter clones.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::uint64_t step = 0;
  AdamConfig config;

  AdamState(const ModelDims& dims, const AdamConfig& cfg)
      : m(dims), v(dims), config(cfg) {}
};

template <class T>
void adam_step(AdamState<T>& state, ModelParams<T>& params, const Gradients<T>& grads) {
  state.step += 1;
  const double b1 = state.config.beta1;
  const double b2 = state.config.beta2;
  const double lr = state.config.learning_rate;
  const double eps = state.config.epsilon;
  const double m_corr = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double v_corr = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto pt = params.flat_tensors();
  auto gt = const_cast<Gradients<T>&>(grads).flat_tensors();
  auto mt = state.m.flat_tensors();
  auto vt = state.v.flat_tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    require_shape(pt[i].size() == gt[i].size(), "adam_step: shape mismatch");
    for (std::size_t k = 0; k < pt[i].size(); ++k) {
      const double g = static_cast<double>(gt[i][k]);
      const double m = b1 * static_cast<double>(mt[i][k]) + (1.0 - b1) * g;
      const double v = b2 * static_cast<double>(vt[i][k]) + (1.0 - b2) * g * g;
      mt[i][k] = static_cast<T>(m);
      vt[i][k] = static_cast<T>(v);
      const double m_hat = m / m_corr;
      const double v_hat = v / v_corr;
      pt[i][k] = static_cast<T>(static_cast<double>(pt[i][k]) -
                                lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

// Scales gradients so the global L2 norm does not exceed `threshold`.
// threshold <= 0 disables clipping. Returns the pre-clip norm.
template <class T>
double clip_gradients(Gradients<T>& grads, double threshold) {
  double sq = 0.0;
  auto gt = grads.flat_tensors();
  for (auto s : gt)
    for (T g : s) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (threshold > 0.0 && norm > threshold) {
    const T scale = static_cast<T>(threshold / norm);
    for (auto s : gt)
      for (T& g : s) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Mini-batching. Without shuffling the corpus order is preserved; with
// shuffling, examples are randomized, grouped by length to limit padding
// waste, and the batch order is randomized again, all from one seed.
// ---------------------------------------------------------------------------

inline std::vector<BatchInput> make_batches(std::span<const EncodedExample> examples,
                                            std::size_t batch_size, std::uint64_t seed,
                                            bool shuffle) {
  require_shape(batch_size > 0, "make_batches: batch_size must be positive");
  require_shape(!examples.empty(), "make_batches: empty corpus");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x6261746368ULL));
  if (shuffle) {
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return examples[a].char_ids.size() < examples[b].char_ids.size();
    });
  }
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    groups.emplace_back(order.begin() + start, order.begin() + start + n);
  }
  if (shuffle) rng.shuffle(groups);
  std::vector<BatchInput> out;
  out.reserve(groups.size());
  std::vector<EncodedExample> scratch;
  for (const auto& group : groups) {
    scratch.clear();
    for (std::size_t idx : group) scratch.push_back(examples[idx]);
    out.push_back(BatchInput::from_examples(scratch));
  }
  return out;
}

// Extracts lanes [first, last) re-padded to their own maximum length.
inline BatchInput slice_batch(const BatchInput& in, std::size_t first, std::size_t last) {
  require_shape(first < last && last <= in.batch, "slice_batch: bad lane range");
  std::vector<EncodedExample> examples;
  examples.reserve(last - first);
  for (std::size_t b = first; b < last; ++b) {
    EncodedExample e;
    for (std::size_t t = 0; t < in.steps && in.valid(b, t); ++t) {
      e.char_ids.push_back(in.id(b, t));
      e.label_ids.push_back(in.label(b, t));
    }
    examples.push_back(std::move(e));
  }
  return BatchInput::from_examples(examples);
}

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t stacks = 2;
  std::size_t hidden_dim = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::uint64_t seed = 42;
  double clip_threshold = 5.0;  // 0 disables
  bool shuffle = true;
  std::size_t threads = 1;  // 1 = deterministic reference mode
};

struct EpochRecord {
  std::size_t epoch = 0;          // 1-based
  double mean_loss = 0.0;         // over all unmasked positions of the epoch
  double heldout_accuracy = -1.;  // overall tagging accuracy; -1 when no dev set
  double wall_seconds = 0.0;
};

template <class T>
struct TrainResult {
  ModelParams<T> final_params;
  ModelParams<T> best_params;
  double best_accuracy = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> log;
};

// Forward+backward for one batch, optionally data-parallel across lanes.
// Any thread split must produce gradients equal to the serial sum within
// 1e-5 relative; the per-lane math is identical, only float summation order
// differs. Returns the batch NLL sum.
template <class T>
double batch_gradients(const ModelParams<T>& params, const BatchInput& in,
                       Gradients<T>& grads, std::size_t threads) {
  if (threads <= 1 || in.batch < 2) {
    const auto trace = batch_forward(params, in);
    return backward(params, trace, in, grads, in.unmasked_count);
  }
  const std::size_t groups = std::min(threads, in.batch);
  std::vector<BatchInput> parts;
  parts.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t first = g * in.batch / groups;
    const std::size_t last = (g + 1) * in.batch / groups;
    parts.push_back(slice_batch(in, first, last));
  }
  std::vector<Gradients<T>> part_grads;
  part_grads.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) part_grads.emplace_back(params.dims);
  std::vector<double> part_loss(groups, 0.0);
  std::vector<std::thread> workers;
  for (std::size_t g = 0; g < groups; ++g)
    workers.emplace_back([&, g] {
      const auto trace = batch_forward(params, parts[g]);
      part_loss[g] = backward(params, trace, parts[g], part_grads[g],
                              in.unmasked_count);
    });
  for (auto& w : workers) w.join();

  auto gt = grads.flat_tensors();
  for (auto s : gt) std::fill(s.begin(), s.end(), T{});
  for (std::size_t g = 0; g < groups; ++g) {  // fixed reduction order
    auto pt = part_grads[g].flat_tensors();
    for (std::size_t i = 0; i < gt.size(); ++i)
      for (std::size_t k = 0; k < gt[i].size(); ++k) gt[i][k] += pt[i][k];
  }
  double loss = 0.0;
  for (double l : part_loss) loss += l;
  return loss;
}

// Full training loop: per epoch, batches of forward/backward/adam_step.
// Returns final parameters plus the best-held-out checkpoint when a dev
// corpus is given (best tracking is an addition on top of the published
// configuration; with no dev set, best == final).
template <class T = float>
TrainResult<T> train(const TrainConfig& cfg, std::span<const EncodedExample> examples,
                     std::span<const TaggedSentence> heldout, const CharVocab& vocab,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  require_shape(!examples.empty(), "train: empty training corpus");
  ModelDims dims{vocab.one_hot_dim(), cfg.hidden_dim, kNumLabelClasses, cfg.stacks};
  TrainResult<T> result;
  result.final_params = init_params<T>(cfg.seed, dims);
  result.best_params = result.final_params;

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  AdamState<T> adam(dims, adam_cfg);
  Gradients<T> grads(dims);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = make_batches(examples, cfg.batch_size,
                                      derive_seed(cfg.seed, epoch), cfg.shuffle);
    double nll_sum = 0.0;
    std::size_t position_count = 0;
    std::size_t batch_index = 0;
    for (const auto& batch : batches) {
      const double batch_nll =
          batch_gradients(result.final_params, batch, grads, cfg.threads);
      if (!std::isfinite(batch_nll))
        throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch_index));
      clip_gradients(grads, cfg.clip_threshold);
      adam_step(adam, result.final_params, grads);
      nll_sum += batch_nll;
      position_count += batch.unmasked_count;
      ++batch_index;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = nll_sum / static_cast<double>(position_count);
    if (!heldout.empty()) {
      const EvalReport report = evaluate(result.final_params, heldout, vocab,
                                         cfg.batch_size, cfg.threads);
      record.heldout_accuracy = report.tags.overall_accuracy;
      if (record.heldout_accuracy > result.best_accuracy) {
        result.best_accuracy = record.heldout_accuracy;
        result.best_epoch = epoch;
        result.best_params = result.final_params;
      }
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  if (heldout.empty()) result.best_params = result.final_params;
  return result;
}

}  // namespace jointtag
