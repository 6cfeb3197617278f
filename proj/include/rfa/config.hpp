#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rfa {

/// Flat `key = value` text file. Keys may be dotted (`fdd.gamma_M`) to form a
/// field path; `#` starts a comment. List values are whitespace or comma
/// separated. Every accessor marks its key as consumed so that leftover
/// (misspelled) keys can be reported by `check_all_consumed`.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  const std::string& origin() const { return origin_; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key) const;
  std::vector<double> get_list(const std::string& key, std::size_t expected) const;

  template <int N>
  Eigen::Matrix<double, N, 1> get_fixed(const std::string& key,
                                         const Eigen::Matrix<double, N, 1>& fallback) const {
    if (!has(key)) return fallback;
    const auto values = get_list(key, N);
    Eigen::Matrix<double, N, 1> out;
    for (int i = 0; i < N; ++i) out[i] = values[static_cast<std::size_t>(i)];
    return out;
  }

  /// Keys with the given prefix (prefix stripped), in lexical order.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  /// Throws a Config error naming the first unused key.
  void check_all_consumed() const;

  void set(const std::string& key, const std::string& value);

 private:
  const std::string& raw(const std::string& key) const;

  std::string origin_;
  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> consumed_;
};

std::string format_double(double value);

}  // namespace rfa
