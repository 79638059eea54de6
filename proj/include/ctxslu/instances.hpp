#pragma once

#include <optional>
#include <vector>

namespace ctxslu {

// One supervised tagging instance: the current driver utterance with its
// intent and per-token slot labels, preceded by every earlier turn of the
// session (both speakers, chronological order). All token/label values are
// vocabulary ids.
struct SluInstance {
  std::vector<std::vector<int>> history;
  std::vector<int> tokens;
  int intent = -1;
  std::vector<int> slot_tags;
};

// One next-utterance candidate: label 1 iff it is the true next turn.
struct DliCandidate {
  std::vector<int> tokens;
  int label = 0;
};

// All candidates for one (session, context-length) pair. Exactly one
// candidate carries label 1 and the context prefix is unshuffled.
struct DliGroup {
  std::vector<std::vector<int>> context;
  std::vector<DliCandidate> candidates;
};

// An SLU instance together with the co-located candidate group for the same
// context prefix (absent when the instance opens the session, k = 0).
struct TrainExample {
  SluInstance slu;
  std::optional<DliGroup> dli;
};

}  // namespace ctxslu
