#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "jointtag/corpus.hpp"
#include "jointtag/mathcore.hpp"
#include "jointtag/rng.hpp"

namespace jointtag {

// One directional LSTM layer. No gate biases; the output projection is the
// only biased layer in the model.
template <class T>
struct LstmCellParams {
  Mat<T> u_forget, w_forget;  // forget gate
  Mat<T> u_cand, w_cand;      // candidate (add-gate tanh branch)
  Mat<T> u_ingate, w_ingate;  // add-gate sigmoid branch
  Mat<T> u_outgate, w_outgate;

  LstmCellParams() = default;
  LstmCellParams(std::size_t hidden, std::size_t input)
      : u_forget(hidden, hidden),
        w_forget(hidden, input),
        u_cand(hidden, hidden),
        w_cand(hidden, input),
        u_ingate(hidden, hidden),
        w_ingate(hidden, input),
        u_outgate(hidden, hidden),
        w_outgate(hidden, input) {}
};

template <class T>
struct LstmState {
  Vec<T> h;
  Vec<T> c;

  LstmState() = default;
  explicit LstmState(std::size_t hidden) : h(hidden, T{}), c(hidden, T{}) {}
};

struct ModelDims {
  std::size_t input_dim = 0;   // one-hot dimension (vocab size + unknown)
  std::size_t hidden_dim = 0;
  std::size_t num_classes = kNumLabelClasses;
  std::size_t stacks = 2;
};

inline constexpr std::size_t kForwardDir = 0;
inline constexpr std::size_t kBackwardDir = 1;

// All trainable parameters: two independent directional stacks concatenated
// only at the top, then one feed-forward projection with bias.
template <class T>
struct ModelParams {
  ModelDims dims;
  std::array<std::vector<LstmCellParams<T>>, 2> stacks;  // [direction][layer]
  Mat<T> w_out;  // num_classes x 2*hidden
  Vec<T> b_out;  // num_classes

  ModelParams() = default;
  explicit ModelParams(const ModelDims& d) : dims(d) {
    require_shape(d.input_dim > 0 && d.hidden_dim > 0 && d.stacks > 0,
                  "ModelParams: dims must be positive");
    require_shape(d.num_classes == kNumLabelClasses,
                  "ModelParams: class count must be tags+1");
    for (auto& stack : stacks) {
      stack.reserve(d.stacks);
      for (std::size_t l = 0; l < d.stacks; ++l)
        stack.emplace_back(d.hidden_dim, l == 0 ? d.input_dim : d.hidden_dim);
    }
    w_out = Mat<T>(d.num_classes, 2 * d.hidden_dim);
    b_out.assign(d.num_classes, T{});
  }

  // Every tensor in the fixed declared order used by the optimizer, the
  // serializer and the finite-difference sweep.
  std::vector<std::span<T>> flat_tensors() {
    std::vector<std::span<T>> out;
    for (auto& stack : stacks)
      for (auto& layer : stack)
        for (Mat<T>* m : {&layer.u_forget, &layer.w_forget, &layer.u_cand, &layer.w_cand,
                          &layer.u_ingate, &layer.w_ingate, &layer.u_outgate,
                          &layer.w_outgate})
          out.push_back(std::span<T>(m->a));
    out.push_back(std::span<T>(w_out.a));
    out.push_back(std::span<T>(b_out));
    return out;
  }
  std::vector<std::span<const T>> flat_tensors() const {
    auto& self = const_cast<ModelParams&>(*this);
    std::vector<std::span<const T>> out;
    for (auto s : self.flat_tensors()) out.emplace_back(s.data(), s.size());
    return out;
  }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> out;
    for (std::size_t d = 0; d < 2; ++d) {
      const std::string dir = d == kForwardDir ? "fwd" : "bwd";
      for (std::size_t l = 0; l < dims.stacks; ++l)
        for (const char* n : {"u_forget", "w_forget", "u_cand", "w_cand", "u_ingate",
                              "w_ingate", "u_outgate", "w_outgate"})
          out.push_back(dir + ".l" + std::to_string(l) + "." + n);
    }
    out.push_back("w_out");
    out.push_back("b_out");
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto s : flat_tensors()) n += s.size();
    return n;
  }
};

template <class To, class From>
ModelParams<To> convert_params(const ModelParams<From>& src) {
  ModelParams<To> dst(src.dims);
  auto dt = dst.flat_tensors();
  auto st = src.flat_tensors();
  for (std::size_t i = 0; i < dt.size(); ++i)
    for (std::size_t k = 0; k < dt[i].size(); ++k)
      dt[i][k] = static_cast<To>(st[i][k]);
  return dst;
}

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], output bias zero.
// Draw order follows the declared tensor order, so a seed pins every weight.
template <class T>
ModelParams<T> init_params(std::uint64_t seed, const ModelDims& dims) {
  ModelParams<T> p(dims);
  Rng rng(seed);
  auto fill = [&rng](Mat<T>& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols));
    for (auto& x : m.a) x = static_cast<T>(rng.next_symmetric(bound));
  };
  for (auto& stack : p.stacks)
    for (auto& layer : stack)
      for (Mat<T>* m : {&layer.u_forget, &layer.w_forget, &layer.u_cand, &layer.w_cand,
                        &layer.u_ingate, &layer.w_ingate, &layer.u_outgate,
                        &layer.w_outgate})
        fill(*m);
  fill(p.w_out);
  return p;
}

// ---------------------------------------------------------------------------
// Single-sequence cells (reference path).
// ---------------------------------------------------------------------------

// Simple recurrent baseline: h_t = tanh(U h_prev + W x).
template <class T>
Vec<T> elman_cell(const Mat<T>& u, const Mat<T>& w, const Vec<T>& h_prev, const Vec<T>& x) {
  return tanh_act(add(matvec(u, h_prev), matvec(w, x)));
}

template <class T>
struct CellTrace {
  Vec<T> forget;     // sigmoid forget gate
  Vec<T> cand;       // tanh candidate
  Vec<T> ingate;     // sigmoid add gate
  Vec<T> outgate;    // sigmoid output gate
  Vec<T> cell_new;   // cand (.) ingate
  Vec<T> cell_kept;  // c_prev (.) forget
  Vec<T> cell;       // cell_new + cell_kept
  Vec<T> hidden;     // outgate (.) tanh(cell)
};

template <class T>
LstmState<T> lstm_cell(const LstmCellParams<T>& p, const LstmState<T>& s, const Vec<T>& x,
                       CellTrace<T>* trace = nullptr) {
  const Vec<T> forget = sigmoid(add(matvec(p.u_forget, s.h), matvec(p.w_forget, x)));
  const Vec<T> cell_kept = hadamard(s.c, forget);
  const Vec<T> cand = tanh_act(add(matvec(p.u_cand, s.h), matvec(p.w_cand, x)));
  const Vec<T> ingate = sigmoid(add(matvec(p.u_ingate, s.h), matvec(p.w_ingate, x)));
  const Vec<T> cell_new = hadamard(cand, ingate);
  const Vec<T> cell = add(cell_new, cell_kept);
  const Vec<T> outgate = sigmoid(add(matvec(p.u_outgate, s.h), matvec(p.w_outgate, x)));
  LstmState<T> next;
  next.c = cell;
  next.h = hadamard(outgate, tanh_act(cell));
  if (trace != nullptr)
    *trace = {forget, cand, ingate, outgate, cell_new, cell_kept, cell, next.h};
  return next;
}

// Runs one directional stack over a sequence. Layer 1 consumes the inputs
// (in reverse order when reversed), each further layer consumes the previous
// layer's hidden outputs; the returned top-layer vectors are re-aligned to
// the original timestep order. States start at zero.
template <class T>
std::vector<Vec<T>> run_direction(std::span<const LstmCellParams<T>> layers,
                                  const std::vector<Vec<T>>& inputs, bool reversed) {
  require_shape(!inputs.empty(), "run_direction: empty input sequence");
  require_shape(!layers.empty(), "run_direction: no layers");
  const std::size_t steps = inputs.size();
  const std::size_t hidden = layers[0].u_forget.rows;
  std::vector<Vec<T>> current(steps);
  for (std::size_t t = 0; t < steps; ++t)
    current[t] = inputs[reversed ? steps - 1 - t : t];
  for (const auto& layer : layers) {
    LstmState<T> state(hidden);
    for (std::size_t t = 0; t < steps; ++t) {
      state = lstm_cell(layer, state, current[t]);
      current[t] = state.h;
    }
  }
  if (reversed) std::reverse(current.begin(), current.end());
  return current;
}

// ---------------------------------------------------------------------------
// Batched lockstep path. Sequences are right-padded; the mask zeroes h and c
// at padded steps, which makes every lane's outputs identical to running it
// alone (padding processed before real data in the reversed direction starts
// from an exactly-zero state).
// ---------------------------------------------------------------------------

struct BatchInput {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::uint32_t> ids;   // [b * steps + t]; kPadId past each length
  std::vector<LabelId> labels;      // [b * steps + t]; NS at padded steps
  std::vector<std::uint8_t> mask;   // [b * steps + t]; 1 iff t < length(b)
  std::size_t unmasked_count = 0;

  std::uint32_t id(std::size_t b, std::size_t t) const { return ids[b * steps + t]; }
  LabelId label(std::size_t b, std::size_t t) const { return labels[b * steps + t]; }
  bool valid(std::size_t b, std::size_t t) const { return mask[b * steps + t] != 0; }

  static BatchInput from_examples(std::span<const EncodedExample> examples) {
    BatchInput out;
    out.batch = examples.size();
    for (const auto& e : examples) out.steps = std::max(out.steps, e.char_ids.size());
    out.ids.assign(out.batch * out.steps, kPadId);
    out.labels.assign(out.batch * out.steps, kNsLabel);
    out.mask.assign(out.batch * out.steps, 0);
    for (std::size_t b = 0; b < out.batch; ++b) {
      const auto& e = examples[b];
      require_shape(!e.char_ids.empty() && e.char_ids.size() == e.label_ids.size(),
                    "BatchInput: bad example");
      for (std::size_t t = 0; t < e.char_ids.size(); ++t) {
        out.ids[b * out.steps + t] = e.char_ids[t];
        out.labels[b * out.steps + t] = e.label_ids[t];
        out.mask[b * out.steps + t] = 1;
      }
      out.unmasked_count += e.char_ids.size();
    }
    return out;
  }

  static BatchInput from_ids(std::span<const std::uint32_t> char_ids) {
    EncodedExample e;
    e.char_ids.assign(char_ids.begin(), char_ids.end());
    e.label_ids.assign(char_ids.size(), kNsLabel);
    return from_examples(std::span<const EncodedExample>(&e, 1));
  }
};

// Gate activations and states of one layer step, each hidden x batch.
template <class T>
struct StepTrace {
  Mat<T> forget, cand, ingate, outgate;
  Mat<T> cell_new, cell_kept;  // cand.ingate and c_prev.forget
  Mat<T> cell_tanh;            // tanh of the pre-mask cell
  Mat<T> cell, hidden;         // post-mask states
};

template <class T>
struct ForwardTrace {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::size_t layers = 0;
  // step(dir, layer, t): trace of that cell application at timestep t.
  std::vector<StepTrace<T>> cells;
  std::vector<Mat<T>> concat_hidden;  // per t: 2*hidden x batch
  std::vector<Mat<T>> logits;         // per t: classes x batch
  std::vector<Mat<T>> probs;          // per t: classes x batch

  StepTrace<T>& step(std::size_t dir, std::size_t layer, std::size_t t) {
    return cells[(dir * layers + layer) * steps + t];
  }
  const StepTrace<T>& step(std::size_t dir, std::size_t layer, std::size_t t) const {
    return cells[(dir * layers + layer) * steps + t];
  }

  T prob(std::size_t t, std::size_t cls, std::size_t lane = 0) const {
    return probs[t](cls, lane);
  }
};

namespace detail {

// Applies the batch mask of timestep t column-wise.
template <class T>
void mask_columns(Mat<T>& m, const BatchInput& in, std::size_t t) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    T* row = m.a.data() + i * m.cols;
    for (std::size_t b = 0; b < m.cols; ++b)
      if (!in.valid(b, t)) row[b] = T{};
  }
}

}  // namespace detail

template <class T>
ForwardTrace<T> batch_forward(const ModelParams<T>& params, const BatchInput& in) {
  require_shape(in.batch > 0 && in.steps > 0, "batch_forward: empty batch");
  const std::size_t hidden = params.dims.hidden_dim;
  const std::size_t layers = params.dims.stacks;
  const std::size_t batch = in.batch;
  const std::size_t steps = in.steps;

  ForwardTrace<T> trace;
  trace.batch = batch;
  trace.steps = steps;
  trace.layers = layers;
  trace.cells.resize(2 * layers * steps);

  // Per-timestep one-hot ids, shared by both directions.
  std::vector<std::vector<std::uint32_t>> step_ids(steps,
                                                   std::vector<std::uint32_t>(batch));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b) {
      const std::uint32_t id = in.id(b, t);
      require_shape(id == kPadId || id < params.dims.input_dim,
                    "model_forward: index out of range");
      step_ids[t][b] = id;
    }

  const Mat<T> zero_state(hidden, batch);
  Mat<T> pre(hidden, batch);

  for (std::size_t dir = 0; dir < 2; ++dir) {
    const bool reversed = dir == kBackwardDir;
    for (std::size_t step_i = 0; step_i < steps; ++step_i) {
      const std::size_t t = reversed ? steps - 1 - step_i : step_i;
      for (std::size_t layer = 0; layer < layers; ++layer) {
        const auto& p = params.stacks[dir][layer];
        const Mat<T>* h_prev = &zero_state;
        const Mat<T>* c_prev = &zero_state;
        if (step_i > 0) {
          const auto& prev = trace.step(dir, layer, reversed ? t + 1 : t - 1);
          h_prev = &prev.hidden;
          c_prev = &prev.cell;
        }
        const Mat<T>* x = layer > 0 ? &trace.step(dir, layer - 1, t).hidden : nullptr;

        auto& cell = trace.step(dir, layer, t);
        auto gate = [&](const Mat<T>& u, const Mat<T>& w, bool use_tanh) {
          matmul_nn(pre, u, *h_prev, /*accumulate=*/false);
          if (layer == 0)
            add_onehot_columns(pre, w, std::span<const std::uint32_t>(step_ids[t]));
          else
            matmul_nn(pre, w, *x, /*accumulate=*/true);
          Mat<T> out(hidden, batch);
          for (std::size_t k = 0; k < pre.a.size(); ++k)
            out.a[k] = use_tanh
                           ? static_cast<T>(std::tanh(static_cast<double>(pre.a[k])))
                           : static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(
                                                       pre.a[k]))));
          return out;
        };

        cell.forget = gate(p.u_forget, p.w_forget, false);
        cell.cand = gate(p.u_cand, p.w_cand, true);
        cell.ingate = gate(p.u_ingate, p.w_ingate, false);
        cell.outgate = gate(p.u_outgate, p.w_outgate, false);

        cell.cell_kept = Mat<T>(hidden, batch);
        cell.cell_new = Mat<T>(hidden, batch);
        cell.cell = Mat<T>(hidden, batch);
        cell.cell_tanh = Mat<T>(hidden, batch);
        cell.hidden = Mat<T>(hidden, batch);
        for (std::size_t k = 0; k < cell.cell.a.size(); ++k) {
          cell.cell_kept.a[k] = c_prev->a[k] * cell.forget.a[k];
          cell.cell_new.a[k] = cell.cand.a[k] * cell.ingate.a[k];
          const T c_raw = cell.cell_new.a[k] + cell.cell_kept.a[k];
          cell.cell.a[k] = c_raw;
          cell.cell_tanh.a[k] = static_cast<T>(std::tanh(static_cast<double>(c_raw)));
          cell.hidden.a[k] = cell.outgate.a[k] * cell.cell_tanh.a[k];
        }
        detail::mask_columns(cell.cell, in, t);
        detail::mask_columns(cell.hidden, in, t);
      }
    }
  }

  // Concatenate top-layer directional hiddens, project, softmax per column.
  trace.concat_hidden.reserve(steps);
  trace.logits.reserve(steps);
  trace.probs.reserve(steps);
  const std::size_t classes = params.dims.num_classes;
  for (std::size_t t = 0; t < steps; ++t) {
    Mat<T> cc(2 * hidden, batch);
    const auto& hf = trace.step(kForwardDir, layers - 1, t).hidden;
    const auto& hb = trace.step(kBackwardDir, layers - 1, t).hidden;
    std::copy(hf.a.begin(), hf.a.end(), cc.a.begin());
    std::copy(hb.a.begin(), hb.a.end(), cc.a.begin() + hf.a.size());

    Mat<T> logits(classes, batch);
    matmul_nn(logits, params.w_out, cc, /*accumulate=*/false);
    for (std::size_t i = 0; i < classes; ++i) {
      T* row = logits.a.data() + i * batch;
      for (std::size_t b = 0; b < batch; ++b) row[b] += params.b_out[i];
    }

    Mat<T> probs(classes, batch);
    for (std::size_t b = 0; b < batch; ++b) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < classes; ++i)
        mx = std::max(mx, static_cast<double>(logits(i, b)));
      double sum = 0.0;
      for (std::size_t i = 0; i < classes; ++i) {
        const double e = std::exp(static_cast<double>(logits(i, b)) - mx);
        probs(i, b) = static_cast<T>(e);
        sum += e;
      }
      for (std::size_t i = 0; i < classes; ++i)
        probs(i, b) = static_cast<T>(static_cast<double>(probs(i, b)) / sum);
    }
    trace.concat_hidden.push_back(std::move(cc));
    trace.logits.push_back(std::move(logits));
    trace.probs.push_back(std::move(probs));
  }
  return trace;
}

// Forward pass over one sequence (batch of one).
template <class T>
ForwardTrace<T> model_forward(const ModelParams<T>& params,
                              std::span<const std::uint32_t> char_ids) {
  require_shape(!char_ids.empty(), "model_forward: empty input");
  return batch_forward(params, BatchInput::from_ids(char_ids));
}

// Greedy per-timestep decoding; ties break to the lowest class index.
template <class T>
std::vector<LabelId> predict_tags(const ModelParams<T>& params,
                                  std::span<const std::uint32_t> char_ids) {
  const auto trace = model_forward(params, char_ids);
  std::vector<LabelId> out(trace.steps);
  for (std::size_t t = 0; t < trace.steps; ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < params.dims.num_classes; ++c)
      if (trace.probs[t](c, 0) > trace.probs[t](best, 0)) best = c;
    out[t] = static_cast<LabelId>(best);
  }
  return out;
}

// Batched greedy decoding for whole corpora; output order matches input.
// Sequences are grouped by length to limit padding work.
template <class T>
std::vector<std::vector<LabelId>> predict_tags_batched(
    const ModelParams<T>& params, std::span<const std::vector<std::uint32_t>> sequences,
    std::size_t batch_size) {
  std::vector<std::vector<LabelId>> out(sequences.size());
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sequences[a].size() < sequences[b].size();
  });
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    std::vector<EncodedExample> group(n);
    for (std::size_t k = 0; k < n; ++k) {
      group[k].char_ids = sequences[order[start + k]];
      group[k].label_ids.assign(group[k].char_ids.size(), kNsLabel);
    }
    const BatchInput in = BatchInput::from_examples(group);
    const auto trace = batch_forward(params, in);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t len = sequences[order[start + k]].size();
      std::vector<LabelId> labels(len);
      for (std::size_t t = 0; t < len; ++t) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < params.dims.num_classes; ++c)
          if (trace.probs[t](c, k) > trace.probs[t](best, k)) best = c;
        labels[t] = static_cast<LabelId>(best);
      }
      out[order[start + k]] = std::move(labels);
    }
  }
  return out;
}

}  // namespace jointtag
