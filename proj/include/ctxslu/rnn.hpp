#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxslu/params.hpp"
#include "ctxslu/tape.hpp"

namespace ctxslu {

// Gated recurrent unit with the update-gate-on-candidate convention:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wn x + r * (Un h) + bn)
//   h' = (1 - z) * h + z * n
// With all parameters zero this halves the state each step, which the tests
// pin down as the convention's fingerprint.
class GruCell {
 public:
  GruCell(ParameterStore& store, const std::string& prefix, int input_dim, int hidden_dim)
      : input_dim_(input_dim), hidden_dim_(hidden_dim) {
    if (input_dim <= 0 || hidden_dim <= 0) {
      throw std::invalid_argument("GruCell dimensions must be positive");
    }
    Shape w{hidden_dim, input_dim}, u{hidden_dim, hidden_dim}, b{hidden_dim};
    wz_ = store.get_or_create(prefix + ".wz", w);
    uz_ = store.get_or_create(prefix + ".uz", u);
    bz_ = store.get_or_create(prefix + ".bz", b, ParamInit::Zero);
    wr_ = store.get_or_create(prefix + ".wr", w);
    ur_ = store.get_or_create(prefix + ".ur", u);
    br_ = store.get_or_create(prefix + ".br", b, ParamInit::Zero);
    wn_ = store.get_or_create(prefix + ".wn", w);
    un_ = store.get_or_create(prefix + ".un", u);
    bn_ = store.get_or_create(prefix + ".bn", b, ParamInit::Zero);
  }

  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }

  Var zero_state(Tape& t) const { return t.zeros({hidden_dim_}); }

  Var step(Tape& t, Var x, Var h_prev) const {
    Var z = t.sigmoid(t.add_n({t.matvec(t.param(wz_), x), t.matvec(t.param(uz_), h_prev), t.param(bz_)}));
    Var r = t.sigmoid(t.add_n({t.matvec(t.param(wr_), x), t.matvec(t.param(ur_), h_prev), t.param(br_)}));
    Var n = t.tanh(t.add_n(
        {t.matvec(t.param(wn_), x), t.mul(r, t.matvec(t.param(un_), h_prev)), t.param(bn_)}));
    return t.add(t.mul(t.one_minus(z), h_prev), t.mul(z, n));
  }

 private:
  int input_dim_, hidden_dim_;
  int wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_;
};

struct LstmState {
  Var h;
  Var c;
};

// Standard LSTM:
//   i = sigmoid(Wi x + Ui h + bi)      f = sigmoid(Wf x + Uf h + bf)
//   o = sigmoid(Wo x + Uo h + bo)      g = tanh(Wg x + Ug h + bg)
//   c' = f * c + i * g                 h' = o * tanh(c')
class LstmCell {
 public:
  LstmCell(ParameterStore& store, const std::string& prefix, int input_dim, int hidden_dim)
      : input_dim_(input_dim), hidden_dim_(hidden_dim) {
    if (input_dim <= 0 || hidden_dim <= 0) {
      throw std::invalid_argument("LstmCell dimensions must be positive");
    }
    Shape w{hidden_dim, input_dim}, u{hidden_dim, hidden_dim}, b{hidden_dim};
    wi_ = store.get_or_create(prefix + ".wi", w);
    ui_ = store.get_or_create(prefix + ".ui", u);
    bi_ = store.get_or_create(prefix + ".bi", b, ParamInit::Zero);
    wf_ = store.get_or_create(prefix + ".wf", w);
    uf_ = store.get_or_create(prefix + ".uf", u);
    bf_ = store.get_or_create(prefix + ".bf", b, ParamInit::Zero);
    wo_ = store.get_or_create(prefix + ".wo", w);
    uo_ = store.get_or_create(prefix + ".uo", u);
    bo_ = store.get_or_create(prefix + ".bo", b, ParamInit::Zero);
    wg_ = store.get_or_create(prefix + ".wg", w);
    ug_ = store.get_or_create(prefix + ".ug", u);
    bg_ = store.get_or_create(prefix + ".bg", b, ParamInit::Zero);
  }

  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }

  LstmState zero_state(Tape& t) const { return {t.zeros({hidden_dim_}), t.zeros({hidden_dim_})}; }

  LstmState step(Tape& t, Var x, const LstmState& prev) const {
    Var i = t.sigmoid(t.add_n({t.matvec(t.param(wi_), x), t.matvec(t.param(ui_), prev.h), t.param(bi_)}));
    Var f = t.sigmoid(t.add_n({t.matvec(t.param(wf_), x), t.matvec(t.param(uf_), prev.h), t.param(bf_)}));
    Var o = t.sigmoid(t.add_n({t.matvec(t.param(wo_), x), t.matvec(t.param(uo_), prev.h), t.param(bo_)}));
    Var g = t.tanh(t.add_n({t.matvec(t.param(wg_), x), t.matvec(t.param(ug_), prev.h), t.param(bg_)}));
    Var c = t.add(t.mul(f, prev.c), t.mul(i, g));
    Var h = t.mul(o, t.tanh(c));
    return {h, c};
  }

 private:
  int input_dim_, hidden_dim_;
  int wi_, ui_, bi_, wf_, uf_, bf_, wo_, uo_, bo_, wg_, ug_, bg_;
};

// Per-step outputs are [fwd_t ; bwd_t] (2 * hidden each); the summary state is
// [fwd_T ; bwd_1], i.e. the last state each direction computes.
struct BiOutputs {
  std::vector<Var> outputs;
  Var summary;
};

class BiGru {
 public:
  BiGru(ParameterStore& store, const std::string& prefix, int input_dim, int hidden_dim)
      : fwd_(store, prefix + ".fwd", input_dim, hidden_dim),
        bwd_(store, prefix + ".bwd", input_dim, hidden_dim) {}

  int output_dim() const { return 2 * fwd_.hidden_dim(); }
  int hidden_dim() const { return fwd_.hidden_dim(); }

  // With allow_empty, an empty sequence yields no per-step outputs and an
  // all-zero summary; otherwise empty input is rejected.
  BiOutputs encode(Tape& t, const std::vector<Var>& xs, std::optional<Var> h0_fwd = std::nullopt,
                   std::optional<Var> h0_bwd = std::nullopt, bool allow_empty = false) const {
    if (xs.empty()) {
      if (!allow_empty) {
        throw std::invalid_argument("bidirectional encoder needs a non-empty sequence");
      }
      return BiOutputs{{}, t.zeros({output_dim()})};
    }
    size_t n = xs.size();
    std::vector<Var> hf(n), hb(n);
    Var h = h0_fwd ? *h0_fwd : fwd_.zero_state(t);
    for (size_t i = 0; i < n; ++i) {
      h = fwd_.step(t, xs[i], h);
      hf[i] = h;
    }
    Var hr = h0_bwd ? *h0_bwd : bwd_.zero_state(t);
    for (size_t i = n; i-- > 0;) {
      hr = bwd_.step(t, xs[i], hr);
      hb[i] = hr;
    }
    BiOutputs out;
    out.outputs.reserve(n);
    for (size_t i = 0; i < n; ++i) out.outputs.push_back(t.concat({hf[i], hb[i]}));
    out.summary = t.concat({hf[n - 1], hb[0]});
    return out;
  }

 private:
  GruCell fwd_, bwd_;
};

struct BiLstmInit {
  LstmState fwd;
  LstmState bwd;
};

class BiLstm {
 public:
  BiLstm(ParameterStore& store, const std::string& prefix, int input_dim, int hidden_dim)
      : fwd_(store, prefix + ".fwd", input_dim, hidden_dim),
        bwd_(store, prefix + ".bwd", input_dim, hidden_dim) {}

  int output_dim() const { return 2 * fwd_.hidden_dim(); }
  int hidden_dim() const { return fwd_.hidden_dim(); }

  BiOutputs encode(Tape& t, const std::vector<Var>& xs, std::optional<BiLstmInit> init = std::nullopt,
                   bool allow_empty = false) const {
    if (xs.empty()) {
      if (!allow_empty) {
        throw std::invalid_argument("bidirectional encoder needs a non-empty sequence");
      }
      return BiOutputs{{}, t.zeros({output_dim()})};
    }
    size_t n = xs.size();
    std::vector<Var> hf(n), hb(n);
    LstmState s = init ? init->fwd : fwd_.zero_state(t);
    for (size_t i = 0; i < n; ++i) {
      s = fwd_.step(t, xs[i], s);
      hf[i] = s.h;
    }
    LstmState r = init ? init->bwd : bwd_.zero_state(t);
    for (size_t i = n; i-- > 0;) {
      r = bwd_.step(t, xs[i], r);
      hb[i] = r.h;
    }
    BiOutputs out;
    out.outputs.reserve(n);
    for (size_t i = 0; i < n; ++i) out.outputs.push_back(t.concat({hf[i], hb[i]}));
    out.summary = t.concat({hf[n - 1], hb[0]});
    return out;
  }

 private:
  LstmCell fwd_, bwd_;
};

}  // namespace ctxslu
