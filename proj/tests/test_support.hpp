// Glue between the library's types and the independent oracles, plus small
// filesystem helpers for tests that touch disk.

#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxslu/params.hpp"
#include "ctxslu/tensor.hpp"
#include "oracle_utils.hpp"

namespace support {

inline oracle::Vec to_vec(const ctxslu::Tensor& t) { return t.data; }

inline oracle::Mat to_mat(const ctxslu::Tensor& t) {
  if (t.shape.size() != 2) throw std::invalid_argument("to_mat needs a 2-D tensor");
  oracle::Mat m(static_cast<size_t>(t.rows()));
  for (int r = 0; r < t.rows(); ++r) {
    m[static_cast<size_t>(r)].resize(static_cast<size_t>(t.cols()));
    for (int c = 0; c < t.cols(); ++c) m[static_cast<size_t>(r)][static_cast<size_t>(c)] = t.at(r, c);
  }
  return m;
}

inline oracle::GruWeights gru_weights(const ctxslu::ParameterStore& st, const std::string& p) {
  oracle::GruWeights w;
  w.wz = to_mat(st.value(p + ".wz"));
  w.uz = to_mat(st.value(p + ".uz"));
  w.bz = to_vec(st.value(p + ".bz"));
  w.wr = to_mat(st.value(p + ".wr"));
  w.ur = to_mat(st.value(p + ".ur"));
  w.br = to_vec(st.value(p + ".br"));
  w.wn = to_mat(st.value(p + ".wn"));
  w.un = to_mat(st.value(p + ".un"));
  w.bn = to_vec(st.value(p + ".bn"));
  return w;
}

inline oracle::LstmWeights lstm_weights(const ctxslu::ParameterStore& st, const std::string& p) {
  oracle::LstmWeights w;
  w.wi = to_mat(st.value(p + ".wi"));
  w.ui = to_mat(st.value(p + ".ui"));
  w.bi = to_vec(st.value(p + ".bi"));
  w.wf = to_mat(st.value(p + ".wf"));
  w.uf = to_mat(st.value(p + ".uf"));
  w.bf = to_vec(st.value(p + ".bf"));
  w.wo = to_mat(st.value(p + ".wo"));
  w.uo = to_mat(st.value(p + ".uo"));
  w.bo = to_vec(st.value(p + ".bo"));
  w.wg = to_mat(st.value(p + ".wg"));
  w.ug = to_mat(st.value(p + ".ug"));
  w.bg = to_vec(st.value(p + ".bg"));
  return w;
}

inline double max_abs_diff(const oracle::Vec& a, const oracle::Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff size mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs_diff(const ctxslu::Tensor& a, const ctxslu::Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("max_abs_diff shape mismatch");
  return max_abs_diff(a.data, b.data);
}

// Unique temp directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ctxslu_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path_.string() : (path_ / rel).string();
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace support
