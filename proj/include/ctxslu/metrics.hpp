#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxslu {

// A slot chunk: type plus token span [start, end) within one utterance.
struct Chunk {
  std::string type;
  int start = 0;
  int end = 0;
};

inline bool operator==(const Chunk& a, const Chunk& b) {
  return a.type == b.type && a.start == b.start && a.end == b.end;
}
inline bool operator<(const Chunk& a, const Chunk& b) {
  if (a.start != b.start) return a.start < b.start;
  if (a.end != b.end) return a.end < b.end;
  return a.type < b.type;
}

namespace detail {

// "O" -> ('O', ""); "B-x" -> ('B', "x"); "I-x" -> ('I', "x"); anything else rejected.
inline std::pair<char, std::string> split_tag(const std::string& tag) {
  if (tag == "O") return {'O', ""};
  if (tag.size() >= 3 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
    return {tag[0], tag.substr(2)};
  }
  throw std::invalid_argument("unknown IOB tag '" + tag + "'");
}

}  // namespace detail

// Lenient IOB decoding: B-X starts a chunk, I-X continues an open chunk of
// the same type, an orphan I-X (no open chunk of type X) starts one, O or a
// type switch closes the open chunk.
inline std::vector<Chunk> decode_chunks(const std::vector<std::string>& tags) {
  std::vector<Chunk> chunks;
  bool open = false;
  Chunk cur;
  auto close = [&]() {
    if (open) chunks.push_back(cur);
    open = false;
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    auto [kind, type] = detail::split_tag(tags[static_cast<size_t>(i)]);
    if (kind == 'O') {
      close();
    } else if (kind == 'B' || !open || cur.type != type) {
      close();
      cur = Chunk{type, i, i + 1};
      open = true;
    } else {
      cur.end = i + 1;
    }
  }
  close();
  return chunks;
}

// Inverse of decode_chunks for well-formed, non-overlapping chunk lists.
inline std::vector<std::string> encode_chunks(const std::vector<Chunk>& chunks, int length) {
  std::vector<std::string> tags(static_cast<size_t>(length), "O");
  for (const Chunk& c : chunks) {
    if (c.start < 0 || c.end > length || c.start >= c.end) {
      throw std::invalid_argument("chunk span out of bounds");
    }
    for (int i = c.start; i < c.end; ++i) {
      if (tags[static_cast<size_t>(i)] != "O") throw std::invalid_argument("overlapping chunks");
      tags[static_cast<size_t>(i)] = (i == c.start ? "B-" : "I-") + c.type;
    }
  }
  return tags;
}

// Precision/recall/F1 with the zero-denominator convention: an undefined
// ratio is 0 and the degenerate flag marks a set with no chunks on either side.
struct Prf {
  double p = 0.0;
  double r = 0.0;
  double f1 = 0.0;
  bool degenerate = false;
};

inline Prf make_prf(long long correct, long long predicted, long long gold) {
  Prf m;
  m.p = predicted > 0 ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
  m.r = gold > 0 ? static_cast<double>(correct) / static_cast<double>(gold) : 0.0;
  m.f1 = (m.p + m.r) > 0.0 ? 2.0 * m.p * m.r / (m.p + m.r) : 0.0;
  m.degenerate = predicted == 0 && gold == 0;
  return m;
}

struct TypeCounts {
  long long gold = 0;
  long long predicted = 0;
  long long correct = 0;
};

struct SlotEval {
  Prf micro;                              // exact-span chunk match, micro-averaged
  double macro_f1 = 0.0;                  // unweighted mean of per-type chunk F1
  Prf token;                              // token-level convention over non-O tokens
  std::map<std::string, TypeCounts> per_type;
  long long n_utterances = 0;
};

// Chunk-level micro P/R/F1 over the whole set (a predicted chunk counts only
// on an exact type+span match), per-type counts, macro-over-type F1, and the
// token-level convention alongside.
inline SlotEval slot_prf(const std::vector<std::vector<std::string>>& pred,
                         const std::vector<std::vector<std::string>>& gold) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("pred/gold utterance counts differ");
  }
  SlotEval ev;
  ev.n_utterances = static_cast<long long>(pred.size());
  long long correct = 0, predicted = 0, gold_total = 0;
  long long tok_correct = 0, tok_pred = 0, tok_gold = 0;

  for (size_t u = 0; u < pred.size(); ++u) {
    if (pred[u].size() != gold[u].size()) {
      throw std::invalid_argument("pred/gold tag lengths differ at utterance " +
                                  std::to_string(u));
    }
    std::vector<Chunk> pc = decode_chunks(pred[u]);
    std::vector<Chunk> gc = decode_chunks(gold[u]);
    predicted += static_cast<long long>(pc.size());
    gold_total += static_cast<long long>(gc.size());
    for (const Chunk& c : pc) ev.per_type[c.type].predicted++;
    for (const Chunk& c : gc) ev.per_type[c.type].gold++;
    std::vector<bool> used(gc.size(), false);
    for (const Chunk& c : pc) {
      for (size_t j = 0; j < gc.size(); ++j) {
        if (!used[j] && gc[j] == c) {
          used[j] = true;
          ++correct;
          ev.per_type[c.type].correct++;
          break;
        }
      }
    }
    for (size_t i = 0; i < pred[u].size(); ++i) {
      bool pn = pred[u][i] != "O";
      bool gn = gold[u][i] != "O";
      tok_pred += pn ? 1 : 0;
      tok_gold += gn ? 1 : 0;
      tok_correct += (pn && gn && pred[u][i] == gold[u][i]) ? 1 : 0;
    }
  }

  ev.micro = make_prf(correct, predicted, gold_total);
  ev.token = make_prf(tok_correct, tok_pred, tok_gold);
  if (!ev.per_type.empty()) {
    double sum = 0.0;
    for (const auto& [type, c] : ev.per_type) {
      sum += make_prf(c.correct, c.predicted, c.gold).f1;
    }
    ev.macro_f1 = sum / static_cast<double>(ev.per_type.size());
  }
  return ev;
}

// Exact-match fraction over evaluated turns.
template <typename T>
double intent_accuracy(const std::vector<T>& pred, const std::vector<T>& gold) {
  if (pred.empty()) throw std::invalid_argument("intent accuracy over an empty set");
  if (pred.size() != gold.size()) throw std::invalid_argument("pred/gold counts differ");
  long long hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace ctxslu
