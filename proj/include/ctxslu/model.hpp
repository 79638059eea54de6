#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxslu/instances.hpp"
#include "ctxslu/memory.hpp"
#include "ctxslu/params.hpp"
#include "ctxslu/rnn.hpp"
#include "ctxslu/tape.hpp"

namespace ctxslu {

// NoMem       no context knowledge at all
// MemNet      attention retrieval, h concatenated to every tagger-layer-2 input
// Sden        sequential retrieval, h initializes the tagger layer-2 states
// SdenDagger  sequential retrieval, h concatenated like MemNet
enum class SluVariant { NoMem, MemNet, Sden, SdenDagger };

inline const char* to_string(SluVariant v) {
  switch (v) {
    case SluVariant::NoMem: return "nomem";
    case SluVariant::MemNet: return "memnet";
    case SluVariant::Sden: return "sden";
    case SluVariant::SdenDagger: return "sden_dagger";
  }
  return "?";
}

inline SluVariant parse_variant(const std::string& s) {
  if (s == "nomem") return SluVariant::NoMem;
  if (s == "memnet") return SluVariant::MemNet;
  if (s == "sden") return SluVariant::Sden;
  if (s == "sden_dagger") return SluVariant::SdenDagger;
  throw std::invalid_argument("unknown variant '" + s +
                              "' (expected nomem|memnet|sden|sden_dagger)");
}

inline bool uses_memory(SluVariant v) { return v != SluVariant::NoMem; }

struct ModelConfig {
  int vocab_size = 0;
  int n_intents = 0;
  int n_slot_labels = 0;
  int embedding_dim = 100;
  int hidden_dim = 64;
  double dropout = 0.3;  // drop probability; applied to embeddings and layer-1 outputs
  SluVariant variant = SluVariant::NoMem;

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must cover pad and unk");
    if (n_intents < 1) throw std::invalid_argument("n_intents must be positive");
    if (n_slot_labels < 1) throw std::invalid_argument("n_slot_labels must be positive");
    if (embedding_dim < 1 || hidden_dim < 1) {
      throw std::invalid_argument("embedding/hidden dimensions must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("dropout rate must lie in [0,1)");
    }
  }
};

// The stacked tagger with variant-specific context injection.
//
//   O1   = BiGRU_1(embeddings of the current utterance)
//   O2   = BiLSTM_2(step inputs), step input = [o1_t ; h] for MemNet and
//          SdenDagger, o1_t alone for NoMem and Sden; Sden instead maps h
//          through four learned projections to both directions' initial
//          hidden and cell states
//   intent logits = U s2 (s2 the BiLSTM summary), slot logits_t = V o2_t
//
// Context knowledge h comes from a memory bank of per-utterance encodings
// (shared BiGRU_m) queried by the current encoding c = BiGRU_c summary:
// attention retrieval for MemNet, gated sequential retrieval for Sden and
// SdenDagger. The same bank and retrieval serve the next-utterance scorer,
// whose 2-class logits are W_d h (class 0 = is-next).
class SluModel {
 public:
  SluModel(ParameterStore& store, const ModelConfig& cfg) : store_(&store), cfg_(cfg) {
    cfg.validate();
    const int d = cfg.hidden_dim;
    const int ctx = 2 * d;  // every summary/encoding vector dimension

    embedding_ = store.get_or_create("embedding", {cfg.vocab_size, cfg.embedding_dim});
    tag_gru_ = std::make_unique<BiGru>(store, "tag_gru", cfg.embedding_dim, d);

    if (uses_memory(cfg.variant)) {
      mem_gru_ = std::make_unique<BiGru>(store, "mem_gru", cfg.embedding_dim, d);
      cur_gru_ = std::make_unique<BiGru>(store, "cur_gru", cfg.embedding_dim, d);
      if (cfg.variant == SluVariant::MemNet) {
        attention_ = std::make_unique<AttentionMemory>(store, "mem", ctx);
      } else {
        sequential_ = std::make_unique<SequentialMemory>(store, "mem", ctx, d, d);
      }
      dli_head_ = store.get_or_create("dli_head.w", {2, ctx});
    }

    int layer2_in = concat_injection() ? ctx + ctx : ctx;
    tag_lstm_ = std::make_unique<BiLstm>(store, "tag_lstm", layer2_in, d);
    if (cfg.variant == SluVariant::Sden) {
      for (const char* leg : {"fwd_h", "fwd_c", "bwd_h", "bwd_c"}) {
        std::string base = std::string("state_proj.") + leg;
        proj_w_.push_back(store.get_or_create(base + ".w", {d, ctx}));
        proj_b_.push_back(store.get_or_create(base + ".b", {d}, ParamInit::Zero));
      }
    }
    intent_head_ = store.get_or_create("intent_head.w", {cfg.n_intents, ctx});
    slot_head_ = store.get_or_create("slot_head.w", {cfg.n_slot_labels, ctx});
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() const { return *store_; }
  int context_dim() const { return 2 * cfg_.hidden_dim; }

  // Embeds one token sequence, with inverted dropout at train time.
  std::vector<Var> embed_tokens(Tape& t, const std::vector<int>& tokens, bool train,
                                RngState* rng) const {
    Var table = t.param(embedding_);
    std::vector<Var> out;
    out.reserve(tokens.size());
    for (int id : tokens) {
      Var e = t.embed(table, id);
      out.push_back(apply_dropout(t, e, train, rng));
    }
    return out;
  }

  // Summary encoding of one utterance with the current-utterance encoder.
  Var encode_utterance(Tape& t, const std::vector<int>& tokens, bool train, RngState* rng) const {
    require_memory("encode_utterance");
    return cur_gru_->encode(t, embed_tokens(t, tokens, train, rng)).summary;
  }

  // Memory bank m_1..m_k over the history utterances (empty history -> empty bank).
  std::vector<Var> encode_history_bank(Tape& t, const std::vector<std::vector<int>>& history,
                                       bool train, RngState* rng) const {
    require_memory("encode_history_bank");
    std::vector<Var> bank;
    bank.reserve(history.size());
    for (const auto& utt : history) {
      bank.push_back(mem_gru_->encode(t, embed_tokens(t, utt, train, rng)).summary);
    }
    return bank;
  }

  // Variant retrieval with the empty-history rule: attention path falls back
  // to Wo c, sequential path to the zero vector.
  Var knowledge(Tape& t, Var current, const std::vector<Var>& memories) const {
    require_memory("knowledge");
    if (attention_) return attention_->knowledge(t, current, memories);
    return sequential_->knowledge(t, current, memories);
  }

  // 2-class next-utterance logits (class 0 = is-next).
  Var dli_logits(Tape& t, Var h) const {
    require_memory("dli_logits");
    return t.matvec(t.param(dli_head_), h);
  }

  struct Forward {
    Var intent_logits;
    std::vector<Var> slot_logits;
    std::vector<Var> memories;  // encoded bank (empty for NoMem or k = 0)
    Var current;                // c (invalid for NoMem)
    Var knowledge;              // h (invalid for NoMem)
  };

  Forward forward(Tape& t, const SluInstance& ex, bool train = false,
                  RngState* rng = nullptr) const {
    if (ex.tokens.empty()) throw std::invalid_argument("current utterance must be non-empty");
    Forward f;

    if (uses_memory(cfg_.variant)) {
      f.memories = encode_history_bank(t, ex.history, train, rng);
      f.current = encode_utterance(t, ex.tokens, train, rng);
      f.knowledge = knowledge(t, f.current, f.memories);
    }

    std::vector<Var> o1 = tag_gru_->encode(t, embed_tokens(t, ex.tokens, train, rng)).outputs;
    std::vector<Var> layer2_in;
    layer2_in.reserve(o1.size());
    for (Var o : o1) {
      Var v = apply_dropout(t, o, train, rng);
      layer2_in.push_back(concat_injection() ? t.concat({v, f.knowledge}) : v);
    }

    std::optional<BiLstmInit> init;
    if (cfg_.variant == SluVariant::Sden) {
      auto proj = [&](int leg) {
        return t.add(t.matvec(t.param(proj_w_[leg]), f.knowledge), t.param(proj_b_[leg]));
      };
      init = BiLstmInit{{proj(0), proj(1)}, {proj(2), proj(3)}};
    }
    BiOutputs o2 = tag_lstm_->encode(t, layer2_in, init);

    f.intent_logits = t.matvec(t.param(intent_head_), o2.summary);
    f.slot_logits.reserve(o2.outputs.size());
    for (Var o : o2.outputs) f.slot_logits.push_back(t.matvec(t.param(slot_head_), o));
    return f;
  }

  // NLL of the intent target plus the sum of per-token slot NLLs (the
  // negated per-example log-likelihood).
  Var slu_loss(Tape& t, const Forward& f, const SluInstance& ex) const {
    if (ex.slot_tags.size() != f.slot_logits.size()) {
      throw std::invalid_argument("slot target count must equal token count");
    }
    std::vector<Var> terms;
    terms.reserve(1 + f.slot_logits.size());
    terms.push_back(t.nll_logits(f.intent_logits, ex.intent));
    for (size_t i = 0; i < f.slot_logits.size(); ++i) {
      terms.push_back(t.nll_logits(f.slot_logits[i], ex.slot_tags[i]));
    }
    return t.add_n(terms);
  }

  struct Prediction {
    int intent = -1;
    std::vector<int> slot_tags;
    std::vector<double> intent_probs;
  };

  // Greedy per-token decoding in evaluation mode (no dropout).
  Prediction predict(const SluInstance& ex) const {
    Tape t(store_);
    Forward f = forward(t, ex, /*train=*/false, nullptr);
    Prediction p;
    p.intent = argmax(t.value(f.intent_logits));
    Tape t2(store_);  // softmax only for the reported distribution
    p.intent_probs = t2.value(t2.softmax(t2.constant(t.value(f.intent_logits)))).data;
    p.slot_tags.reserve(f.slot_logits.size());
    for (Var v : f.slot_logits) p.slot_tags.push_back(argmax(t.value(v)));
    return p;
  }

  static int argmax(const Tensor& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.data.size()); ++i) {
      if (v.data[static_cast<size_t>(i)] > v.data[static_cast<size_t>(best)]) best = i;
    }
    return best;
  }

 private:
  bool concat_injection() const {
    return cfg_.variant == SluVariant::MemNet || cfg_.variant == SluVariant::SdenDagger;
  }

  Var apply_dropout(Tape& t, Var v, bool train, RngState* rng) const {
    if (!train || cfg_.dropout == 0.0) return v;
    if (!rng) throw std::invalid_argument("training-mode forward needs an RNG for dropout");
    return t.dropout(v, 1.0 - cfg_.dropout, *rng);
  }

  void require_memory(const char* what) const {
    if (!uses_memory(cfg_.variant)) {
      throw std::logic_error(std::string(what) + " is unavailable for the nomem variant");
    }
  }

  ParameterStore* store_;
  ModelConfig cfg_;
  int embedding_ = -1;
  std::unique_ptr<BiGru> tag_gru_, mem_gru_, cur_gru_;
  std::unique_ptr<BiLstm> tag_lstm_;
  std::unique_ptr<AttentionMemory> attention_;
  std::unique_ptr<SequentialMemory> sequential_;
  std::vector<int> proj_w_, proj_b_;
  int dli_head_ = -1;
  int intent_head_ = -1;
  int slot_head_ = -1;
};

}  // namespace ctxslu
