#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "ctxslu/instances.hpp"
#include "ctxslu/model.hpp"
#include "ctxslu/tape.hpp"

namespace ctxslu {

// Class indices inside the 2-class next-utterance distribution.
constexpr int kDliNextClass = 0;
constexpr int kDliNotNextClass = 1;

inline int dli_class_of_label(int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("DLI label must be 0 or 1");
  return label == 1 ? kDliNextClass : kDliNotNextClass;
}

// Candidate group for context length k over a session of n utterances:
// candidates are utterances k+1..n (1-based), labeled 1 only at k+1; the
// context is the unshuffled prefix.
inline DliGroup make_candidates(const std::vector<std::vector<int>>& session, int k) {
  int n = static_cast<int>(session.size());
  if (k < 1 || k >= n) {
    throw std::invalid_argument("context length must satisfy 1 <= k < session turn count");
  }
  DliGroup g;
  g.context.assign(session.begin(), session.begin() + k);
  g.candidates.reserve(static_cast<size_t>(n - k));
  for (int j = k; j < n; ++j) {
    g.candidates.push_back(DliCandidate{session[static_cast<size_t>(j)], j == k ? 1 : 0});
  }
  return g;
}

// softmax(W_d h): (is-next, is-not-next).
inline Var dli_score(Tape& t, const SluModel& model, Var h) {
  return t.softmax(model.dli_logits(t, h));
}

// Summed NLL of the true labels over one scored candidate group (the negated
// group log-likelihood). The memory bank is shared with the SLU path; when
// the positive candidate's knowledge vector was already computed there, pass
// it as positive_knowledge so the two tasks share the identical subgraph.
inline Var dli_group_loss(Tape& t, const SluModel& model, const std::vector<Var>& memories,
                          const DliGroup& group, std::optional<Var> positive_knowledge,
                          bool train, RngState* rng) {
  if (group.candidates.empty()) throw std::invalid_argument("empty DLI candidate group");
  int positives = 0;
  for (const DliCandidate& c : group.candidates) positives += c.label == 1 ? 1 : 0;
  if (positives != 1) {
    throw std::invalid_argument("a DLI candidate group must contain exactly one positive");
  }
  std::vector<Var> terms;
  terms.reserve(group.candidates.size());
  for (const DliCandidate& cand : group.candidates) {
    Var h;
    if (cand.label == 1 && positive_knowledge) {
      h = *positive_knowledge;
    } else {
      Var c = model.encode_utterance(t, cand.tokens, train, rng);
      h = model.knowledge(t, c, memories);
    }
    terms.push_back(t.nll_logits(model.dli_logits(t, h), dli_class_of_label(cand.label)));
  }
  return t.add_n(terms);
}

}  // namespace ctxslu
