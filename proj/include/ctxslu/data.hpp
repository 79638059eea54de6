#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxslu/dli.hpp"
#include "ctxslu/instances.hpp"
#include "ctxslu/rng.hpp"

namespace ctxslu {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Session types
// ---------------------------------------------------------------------------

struct Turn {
  std::string speaker;              // "driver" | "assistant"
  std::vector<std::string> tokens;
  std::vector<std::string> tags;    // driver turns only, one per token
  std::string intent;               // driver turns only
};

struct DialogueSession {
  std::string id;
  std::vector<std::string> domains;
  std::vector<Turn> turns;
};

// Plain-text log of dropped records and unmatched slot values.
struct SkipReport {
  std::vector<std::string> lines;
  void add(std::string line) { lines.push_back(std::move(line)); }
  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write skip report to " + path);
    for (const auto& l : lines) out << l << '\n';
  }
};

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

inline bool is_peelable_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':' || c == '"' ||
         c == '\'';
}

// Lowercase, split on whitespace, split trailing punctuation into its own
// tokens ("6 pm." -> ["6", "pm", "."]). Inner punctuation ("6:00") is kept.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&]() {
    if (word.empty()) return;
    std::vector<std::string> peeled;
    while (word.size() > 1 && is_peelable_punct(word.back())) {
      peeled.push_back(std::string(1, word.back()));
      word.pop_back();
    }
    out.push_back(word);
    for (auto it = peeled.rbegin(); it != peeled.rend(); ++it) out.push_back(*it);
    word.clear();
  };
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// IOB derivation
// ---------------------------------------------------------------------------

using SlotValue = std::pair<std::string, std::string>;  // (slot name, value string)

// Tags token runs that exactly match a slot value's token sequence
// (case-insensitive via tokenize). Candidate spans across all values are
// resolved longest-first, then leftmost, then by slot name; accepted spans
// never overlap. Values that never occur in the utterance are reported.
inline std::vector<std::string> derive_iob(const std::vector<std::string>& tokens,
                                           const std::vector<SlotValue>& slot_values,
                                           SkipReport* report = nullptr,
                                           std::set<size_t>* matched_values = nullptr) {
  if (tokens.empty()) throw std::invalid_argument("derive_iob needs a non-empty token list");
  struct Span {
    int start, len;
    size_t value_idx;
    const std::string* name;
  };
  std::vector<Span> spans;
  for (size_t v = 0; v < slot_values.size(); ++v) {
    std::vector<std::string> vt = tokenize(slot_values[v].second);
    if (vt.empty()) {
      if (report) {
        report->add("empty slot value for slot '" + slot_values[v].first + "'");
      }
      continue;
    }
    bool found = false;
    for (int s = 0; s + static_cast<int>(vt.size()) <= static_cast<int>(tokens.size()); ++s) {
      bool ok = true;
      for (size_t j = 0; j < vt.size(); ++j) {
        if (tokens[static_cast<size_t>(s) + j] != vt[j]) {
          ok = false;
          break;
        }
      }
      if (ok) {
        spans.push_back(Span{s, static_cast<int>(vt.size()), v, &slot_values[v].first});
        found = true;
      }
    }
    if (!found && report) {
      report->add("slot " + slot_values[v].first + "='" + slot_values[v].second +
                  "' not found in utterance");
    }
  }
  std::stable_sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    if (a.len != b.len) return a.len > b.len;
    if (a.start != b.start) return a.start < b.start;
    return *a.name < *b.name;
  });
  std::vector<std::string> tags(tokens.size(), "O");
  std::vector<bool> used(tokens.size(), false);
  for (const Span& sp : spans) {
    bool free = true;
    for (int i = sp.start; i < sp.start + sp.len; ++i) {
      if (used[static_cast<size_t>(i)]) {
        free = false;
        break;
      }
    }
    if (!free) continue;
    for (int i = sp.start; i < sp.start + sp.len; ++i) {
      used[static_cast<size_t>(i)] = true;
      tags[static_cast<size_t>(i)] = (i == sp.start ? "B-" : "I-") + *sp.name;
    }
    if (matched_values) matched_values->insert(sp.value_idx);
  }
  return tags;
}

// ---------------------------------------------------------------------------
// Raw corpus loading
// ---------------------------------------------------------------------------

// Parses one split of the raw corpus (a JSON array of dialogue records).
// Slot values are pooled per session from the assistant turns' annotations
// and driver turns are tagged against that pool. Sessions with an empty
// dialogue list (or none left after dropping empty utterances) are dropped
// into the report; structurally malformed records are rejected.
inline std::vector<DialogueSession> load_kvret_json(const json& root, const std::string& source,
                                                    SkipReport& report) {
  if (!root.is_array()) throw std::runtime_error(source + ": expected a top-level JSON array");
  std::vector<DialogueSession> sessions;
  sessions.reserve(root.size());

  for (size_t idx = 0; idx < root.size(); ++idx) {
    const json& rec = root[idx];
    std::string where = source + ":record " + std::to_string(idx);
    if (!rec.is_object() || !rec.contains("dialogue") || !rec["dialogue"].is_array()) {
      throw std::runtime_error(where + ": missing or malformed 'dialogue'");
    }
    if (!rec.contains("scenario") || !rec["scenario"].contains("task") ||
        !rec["scenario"]["task"].contains("intent") ||
        !rec["scenario"]["task"]["intent"].is_string()) {
      throw std::runtime_error(where + ": missing scenario.task.intent");
    }
    const json& dialogue = rec["dialogue"];
    if (dialogue.empty()) {
      report.add(where + ": empty dialogue, session dropped");
      continue;
    }
    std::string intent = rec["scenario"]["task"]["intent"].get<std::string>();
    DialogueSession s;
    s.id = rec["scenario"].contains("uuid") && rec["scenario"]["uuid"].is_string()
               ? rec["scenario"]["uuid"].get<std::string>()
               : where;
    s.domains = {intent};

    std::vector<SlotValue> pool;
    std::set<SlotValue> seen;
    std::vector<size_t> driver_turns;
    for (size_t ti = 0; ti < dialogue.size(); ++ti) {
      const json& t = dialogue[ti];
      std::string twhere = where + ", turn " + std::to_string(ti);
      if (!t.is_object() || !t.contains("turn") || !t["turn"].is_string() ||
          !t.contains("data") || !t["data"].is_object() || !t["data"].contains("utterance") ||
          !t["data"]["utterance"].is_string()) {
        throw std::runtime_error(twhere + ": malformed turn");
      }
      std::string speaker = t["turn"].get<std::string>();
      if (speaker != "driver" && speaker != "assistant") {
        throw std::runtime_error(twhere + ": unknown speaker '" + speaker + "'");
      }
      Turn turn;
      turn.speaker = speaker;
      turn.tokens = tokenize(t["data"]["utterance"].get<std::string>());
      if (turn.tokens.empty()) {
        report.add(twhere + ": empty utterance, turn dropped");
        continue;
      }
      if (speaker == "driver") {
        turn.intent = intent;
        driver_turns.push_back(s.turns.size());
      } else if (t["data"].contains("slots") && t["data"]["slots"].is_object()) {
        for (const auto& [name, value] : t["data"]["slots"].items()) {
          if (!value.is_string()) {
            report.add(twhere + ": non-string value for slot '" + name + "', skipped");
            continue;
          }
          SlotValue sv{name, value.get<std::string>()};
          if (seen.insert(sv).second) pool.push_back(std::move(sv));
        }
      }
      s.turns.push_back(std::move(turn));
    }
    if (s.turns.empty()) {
      report.add(where + ": no non-empty turns, session dropped");
      continue;
    }

    std::set<size_t> matched;
    for (size_t dt : driver_turns) {
      s.turns[dt].tags = derive_iob(s.turns[dt].tokens, pool, nullptr, &matched);
    }
    for (size_t v = 0; v < pool.size(); ++v) {
      if (!matched.count(v)) {
        report.add(where + ": slot " + pool[v].first + "='" + pool[v].second +
                   "' not matched in any driver turn");
      }
    }
    sessions.push_back(std::move(s));
  }
  return sessions;
}

inline std::vector<DialogueSession> load_kvret(const std::string& path, SkipReport& report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open raw corpus file " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": JSON parse error: " + e.what());
  }
  return load_kvret_json(root, path, report);
}

// ---------------------------------------------------------------------------
// Multi-domain recombination
// ---------------------------------------------------------------------------

inline bool domains_disjoint(const DialogueSession& a, const DialogueSession& b) {
  for (const auto& da : a.domains) {
    for (const auto& db : b.domains) {
      if (da == db) return false;
    }
  }
  return true;
}

// Recombines pairs of different-domain sessions into single conversations.
// Every session opts in with the given probability (drawn in shuffled scan
// order); an opted-in session is paired with a random unconsumed opted-in
// session of a disjoint domain, concatenating the initiator's turns before
// the partner's. Sessions that opt out, or opt in but find no partner, pass
// through unchanged. Output keeps the initiators' original relative order, so
// prob = 0 reproduces the input exactly.
inline std::vector<DialogueSession> build_kvret_star(const std::vector<DialogueSession>& in,
                                                     double prob, uint64_t seed) {
  if (prob < 0.0 || prob > 1.0) {
    throw std::invalid_argument("recombination probability must lie in [0,1]");
  }
  size_t n = in.size();
  RngState rng(seed);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<char> opted(n, 0);
  for (size_t idx : order) opted[idx] = rng.bernoulli(prob) ? 1 : 0;

  std::vector<char> consumed(n, 0);
  std::vector<std::pair<size_t, DialogueSession>> out;  // (initiator original index, session)
  out.reserve(n);
  for (size_t idx : order) {
    if (consumed[idx]) continue;
    consumed[idx] = 1;
    if (!opted[idx]) {
      out.emplace_back(idx, in[idx]);
      continue;
    }
    std::vector<size_t> partners;
    for (size_t j = 0; j < n; ++j) {
      if (!consumed[j] && opted[j] && domains_disjoint(in[idx], in[j])) partners.push_back(j);
    }
    if (partners.empty()) {
      out.emplace_back(idx, in[idx]);
      continue;
    }
    size_t pj = partners[static_cast<size_t>(rng.uniform_int(static_cast<int>(partners.size())))];
    consumed[pj] = 1;
    DialogueSession merged;
    merged.id = in[idx].id + "+" + in[pj].id;
    merged.domains = in[idx].domains;
    for (const auto& d : in[pj].domains) {
      if (std::find(merged.domains.begin(), merged.domains.end(), d) == merged.domains.end()) {
        merged.domains.push_back(d);
      }
    }
    merged.turns = in[idx].turns;
    merged.turns.insert(merged.turns.end(), in[pj].turns.begin(), in[pj].turns.end());
    out.emplace_back(idx, std::move(merged));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<DialogueSession> result;
  result.reserve(out.size());
  for (auto& pr : out) result.push_back(std::move(pr.second));
  return result;
}

// ---------------------------------------------------------------------------
// Supervised examples
// ---------------------------------------------------------------------------

// String-level supervised instance: one per driver turn, with the full prior
// context of both speakers.
struct RawExample {
  std::vector<std::vector<std::string>> history;
  std::vector<std::string> tokens;
  std::string intent;
  std::vector<std::string> tags;
};

inline std::vector<RawExample> make_examples(const DialogueSession& s) {
  std::vector<RawExample> out;
  for (size_t i = 0; i < s.turns.size(); ++i) {
    if (s.turns[i].speaker != "driver") continue;
    RawExample ex;
    for (size_t j = 0; j < i; ++j) ex.history.push_back(s.turns[j].tokens);
    ex.tokens = s.turns[i].tokens;
    ex.intent = s.turns[i].intent;
    ex.tags = s.turns[i].tags;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

constexpr int kPadId = 0;
constexpr int kUnkId = 1;

struct Vocab {
  std::vector<std::string> tokens;       // id -> token; [0]=<pad>, [1]=<unk>
  std::vector<std::string> slot_labels;  // [0]="O", then B-x/I-x per type
  std::vector<std::string> intents;      // sorted

  std::unordered_map<std::string, int> token_ids;
  std::unordered_map<std::string, int> slot_ids;
  std::unordered_map<std::string, int> intent_ids;

  void rebuild_maps() {
    token_ids.clear();
    slot_ids.clear();
    intent_ids.clear();
    for (size_t i = 0; i < tokens.size(); ++i) token_ids[tokens[i]] = static_cast<int>(i);
    for (size_t i = 0; i < slot_labels.size(); ++i) slot_ids[slot_labels[i]] = static_cast<int>(i);
    for (size_t i = 0; i < intents.size(); ++i) intent_ids[intents[i]] = static_cast<int>(i);
  }

  int token_id(const std::string& tok) const {
    auto it = token_ids.find(tok);
    return it == token_ids.end() ? kUnkId : it->second;
  }
  // Unknown labels fall back to O / intent 0; the caller logs them.
  int slot_id(const std::string& tag, bool* unknown = nullptr) const {
    auto it = slot_ids.find(tag);
    if (it == slot_ids.end()) {
      if (unknown) *unknown = true;
      return 0;
    }
    return it->second;
  }
  int intent_id(const std::string& intent, bool* unknown = nullptr) const {
    auto it = intent_ids.find(intent);
    if (it == intent_ids.end()) {
      if (unknown) *unknown = true;
      return 0;
    }
    return it->second;
  }

  uint64_t fingerprint() const {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto mix = [&h](const std::string& s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= 0xFFu;  // separator
      h *= 1099511628211ULL;
    };
    for (const auto& t : tokens) mix(t);
    mix("|labels|");
    for (const auto& t : slot_labels) mix(t);
    mix("|intents|");
    for (const auto& t : intents) mix(t);
    return h;
  }

  json to_json() const {
    return json{{"tokens", tokens}, {"slot_labels", slot_labels}, {"intents", intents}};
  }

  static Vocab from_json(const json& j) {
    Vocab v;
    v.tokens = j.at("tokens").get<std::vector<std::string>>();
    v.slot_labels = j.at("slot_labels").get<std::vector<std::string>>();
    v.intents = j.at("intents").get<std::vector<std::string>>();
    if (v.tokens.size() < 2 || v.tokens[0] != "<pad>" || v.tokens[1] != "<unk>") {
      throw std::runtime_error("vocabulary file lacks the reserved <pad>/<unk> entries");
    }
    if (v.slot_labels.empty() || v.slot_labels[0] != "O") {
      throw std::runtime_error("slot label inventory must start with O");
    }
    v.rebuild_maps();
    return v;
  }
};

// Token ids ordered by (frequency desc, token lex); slot-type inventory closed
// over B-/I- pairs; intents sorted. Built from the training split only.
inline Vocab build_vocab(const std::vector<DialogueSession>& train, int min_freq = 1) {
  std::map<std::string, long long> freq;
  std::set<std::string> types;
  std::set<std::string> intents;
  for (const auto& s : train) {
    for (const auto& t : s.turns) {
      for (const auto& tok : t.tokens) freq[tok]++;
      for (const auto& tag : t.tags) {
        if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
          types.insert(tag.substr(2));
        }
      }
      if (!t.intent.empty()) intents.insert(t.intent);
    }
  }
  std::vector<std::pair<std::string, long long>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  v.tokens = {"<pad>", "<unk>"};
  for (const auto& [tok, f] : items) {
    if (f >= min_freq) v.tokens.push_back(tok);
  }
  v.slot_labels = {"O"};
  for (const auto& ty : types) {
    v.slot_labels.push_back("B-" + ty);
    v.slot_labels.push_back("I-" + ty);
  }
  v.intents.assign(intents.begin(), intents.end());
  v.rebuild_maps();
  return v;
}

// ---------------------------------------------------------------------------
// Encoding sessions into training examples
// ---------------------------------------------------------------------------

// One TrainExample per driver turn; turns before the current one form the
// history, and every driver turn at k >= 1 carries its co-located candidate
// group over the session's remaining utterances.
inline std::vector<TrainExample> make_train_examples(const DialogueSession& s, const Vocab& v,
                                                     SkipReport* report = nullptr) {
  std::vector<std::vector<int>> turn_ids;
  turn_ids.reserve(s.turns.size());
  for (const auto& t : s.turns) {
    std::vector<int> ids;
    ids.reserve(t.tokens.size());
    for (const auto& tok : t.tokens) ids.push_back(v.token_id(tok));
    turn_ids.push_back(std::move(ids));
  }
  std::vector<TrainExample> out;
  for (size_t i = 0; i < s.turns.size(); ++i) {
    const Turn& t = s.turns[i];
    if (t.speaker != "driver") continue;
    TrainExample ex;
    ex.slu.history.assign(turn_ids.begin(), turn_ids.begin() + static_cast<long>(i));
    ex.slu.tokens = turn_ids[i];
    bool unk = false;
    ex.slu.intent = v.intent_id(t.intent, &unk);
    if (unk && report) report->add("session " + s.id + ": unknown intent '" + t.intent + "'");
    ex.slu.slot_tags.reserve(t.tags.size());
    for (const auto& tag : t.tags) {
      bool tag_unk = false;
      ex.slu.slot_tags.push_back(v.slot_id(tag, &tag_unk));
      if (tag_unk && report) {
        report->add("session " + s.id + ": unknown slot tag '" + tag + "' mapped to O");
      }
    }
    if (i >= 1 && i + 1 <= s.turns.size()) {
      ex.dli = make_candidates(turn_ids, static_cast<int>(i));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TrainExample> make_train_examples(const std::vector<DialogueSession>& sessions,
                                                     const Vocab& v,
                                                     SkipReport* report = nullptr) {
  std::vector<TrainExample> out;
  for (const auto& s : sessions) {
    auto part = make_train_examples(s, v, report);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical JSONL serialization
// ---------------------------------------------------------------------------

inline json session_to_json(const DialogueSession& s) {
  json turns = json::array();
  for (const auto& t : s.turns) {
    json jt{{"speaker", t.speaker}, {"tokens", t.tokens}};
    if (t.speaker == "driver") {
      jt["tags"] = t.tags;
      jt["intent"] = t.intent;
    }
    turns.push_back(std::move(jt));
  }
  return json{{"id", s.id}, {"domains", s.domains}, {"turns", std::move(turns)}};
}

inline DialogueSession session_from_json(const json& j) {
  DialogueSession s;
  s.id = j.at("id").get<std::string>();
  s.domains = j.at("domains").get<std::vector<std::string>>();
  for (const json& jt : j.at("turns")) {
    Turn t;
    t.speaker = jt.at("speaker").get<std::string>();
    t.tokens = jt.at("tokens").get<std::vector<std::string>>();
    if (jt.contains("tags")) t.tags = jt["tags"].get<std::vector<std::string>>();
    if (jt.contains("intent")) t.intent = jt["intent"].get<std::string>();
    if (t.speaker == "driver" && t.tags.size() != t.tokens.size()) {
      throw std::runtime_error("session " + s.id + ": driver turn tag/token count mismatch");
    }
    s.turns.push_back(std::move(t));
  }
  return s;
}

inline void save_sessions_jsonl(const std::vector<DialogueSession>& sessions,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& s : sessions) out << session_to_json(s).dump() << '\n';
}

inline std::vector<DialogueSession> load_sessions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<DialogueSession> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(session_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct SplitStats {
  long long sessions = 0;
  long long turns = 0;
  double avg_turns = 0.0;
};

inline SplitStats compute_split_stats(const std::vector<DialogueSession>& sessions) {
  SplitStats st;
  st.sessions = static_cast<long long>(sessions.size());
  for (const auto& s : sessions) st.turns += static_cast<long long>(s.turns.size());
  st.avg_turns = st.sessions > 0 ? static_cast<double>(st.turns) / st.sessions : 0.0;
  return st;
}

inline json split_stats_json(const SplitStats& st) {
  return json{{"sessions", st.sessions}, {"turns", st.turns}, {"avg_turns", st.avg_turns}};
}

}  // namespace ctxslu
