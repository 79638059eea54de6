#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ctxslu/params.hpp"
#include "ctxslu/rnn.hpp"
#include "ctxslu/tape.hpp"

namespace ctxslu {

// Encode each history utterance (a sequence of input vectors) into one
// summary vector with a shared bidirectional encoder.
inline std::vector<Var> encode_history(Tape& t, const BiGru& encoder,
                                       const std::vector<std::vector<Var>>& history) {
  std::vector<Var> memories;
  memories.reserve(history.size());
  for (const auto& utterance : history) memories.push_back(encoder.encode(t, utterance).summary);
  return memories;
}

namespace detail {

inline Var stack_memories(Tape& t, Var query, const std::vector<Var>& memories) {
  if (memories.empty()) throw std::invalid_argument("attention over an empty memory");
  int d = t.value(query).dim(0);
  for (Var m : memories) {
    if (t.value(m).ndim() != 1 || t.value(m).dim(0) != d) {
      throw std::invalid_argument("memory vector dimension mismatch (query is " +
                                  std::to_string(d) + "-dim, memory is " +
                                  shape_str(t.value(m).shape) + ")");
    }
  }
  return t.stack_rows(memories);
}

}  // namespace detail

// p_i = softmax_i(query . m_i) over a non-empty memory.
inline Var attention_weights(Tape& t, Var query, const std::vector<Var>& memories) {
  Var m = detail::stack_memories(t, query, memories);
  return t.softmax(t.matvec(m, query));
}

// sum_i p_i m_i; probs must have one entry per memory vector.
inline Var attention_readout(Tape& t, Var probs, const std::vector<Var>& memories) {
  if (memories.empty()) throw std::invalid_argument("attention over an empty memory");
  if (t.value(probs).ndim() != 1 ||
      t.value(probs).dim(0) != static_cast<int>(memories.size())) {
    throw std::invalid_argument("attention weights must have one entry per memory vector");
  }
  Var m = t.stack_rows(memories);
  return t.matvec_t(m, probs);
}

// Attention-based knowledge: h = Wo (c + sum_i p_i m_i), with p the dot-product
// attention of the current encoding c over the memories. With no history the
// readout term vanishes, so h = Wo c.
class AttentionMemory {
 public:
  AttentionMemory(ParameterStore& store, const std::string& prefix, int dim) : dim_(dim) {
    if (dim <= 0) throw std::invalid_argument("AttentionMemory dimension must be positive");
    wo_ = store.get_or_create(prefix + ".wo", {dim, dim});
  }

  int dim() const { return dim_; }

  Var knowledge(Tape& t, Var current, const std::vector<Var>& memories) const {
    check_query(t, current);
    if (memories.empty()) return t.matvec(t.param(wo_), current);
    Var p = attention_weights(t, current, memories);
    Var readout = attention_readout(t, p, memories);
    return t.matvec(t.param(wo_), t.add(current, readout));
  }

 private:
  void check_query(Tape& t, Var current) const {
    if (t.value(current).ndim() != 1 || t.value(current).dim(0) != dim_) {
      throw std::invalid_argument("query must be a " + std::to_string(dim_) + "-dim vector, got " +
                                  shape_str(t.value(current).shape));
    }
  }
  int dim_;
  int wo_;
};

// Sequential knowledge: gate each memory against the current encoding,
//   g_i = sigmoid(Wf [c ; m_i] + bf),
// with a single affine layer (2*dim -> gate_dim), then run a bidirectional
// GRU over g_1..g_k and take its summary state. With no history the
// knowledge vector is all zeros.
class SequentialMemory {
 public:
  SequentialMemory(ParameterStore& store, const std::string& prefix, int dim, int gate_dim,
                   int hidden)
      : dim_(dim), ret_gru_(store, prefix + ".gru", gate_dim, hidden) {
    if (dim <= 0 || gate_dim <= 0) {
      throw std::invalid_argument("SequentialMemory dimensions must be positive");
    }
    ff_w_ = store.get_or_create(prefix + ".ff.w", {gate_dim, 2 * dim});
    ff_b_ = store.get_or_create(prefix + ".ff.b", {gate_dim}, ParamInit::Zero);
  }

  int dim() const { return dim_; }
  int knowledge_dim() const { return ret_gru_.output_dim(); }

  Var gate(Tape& t, Var current, Var memory) const {
    return t.sigmoid(t.add(t.matvec(t.param(ff_w_), t.concat({current, memory})), t.param(ff_b_)));
  }

  Var knowledge(Tape& t, Var current, const std::vector<Var>& memories) const {
    if (t.value(current).ndim() != 1 || t.value(current).dim(0) != dim_) {
      throw std::invalid_argument("query must be a " + std::to_string(dim_) + "-dim vector, got " +
                                  shape_str(t.value(current).shape));
    }
    if (memories.empty()) return t.zeros({knowledge_dim()});
    std::vector<Var> gates;
    gates.reserve(memories.size());
    for (Var m : memories) {
      if (t.value(m).ndim() != 1 || t.value(m).dim(0) != dim_) {
        throw std::invalid_argument("memory vector dimension mismatch");
      }
      gates.push_back(gate(t, current, m));
    }
    return ret_gru_.encode(t, gates).summary;
  }

 private:
  int dim_;
  BiGru ret_gru_;
  int ff_w_;
  int ff_b_;
};

}  // namespace ctxslu
