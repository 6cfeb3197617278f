#include "rfa/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "rfa/error.hpp"

namespace rfa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidState: return "invalid-state";
    case ErrorKind::Config: return "config";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Query: return "query";
    case ErrorKind::Planning: return "planning";
    case ErrorKind::Generation: return "generation";
    case ErrorKind::LogFormat: return "log-format";
  }
  return "unknown";
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_number(const std::string& token, const std::string& key) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorKind::Config, key + ": expected a number, got '" + token + "'");
  }
  return value;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile file;
  file.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::Config, origin + ":" + std::to_string(line_no) + ": missing '='");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      fail(ErrorKind::Config, origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (file.entries_.count(key) != 0) {
      fail(ErrorKind::Config, origin + ":" + std::to_string(line_no) + ": duplicate key " + key);
    }
    file.entries_[key] = trim(line.substr(eq + 1));
  }
  return file;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

bool KeyValueFile::has(const std::string& key) const { return entries_.count(key) != 0; }

const std::string& KeyValueFile::raw(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) fail(ErrorKind::Config, key + ": required key missing");
  consumed_.insert(key);
  return it->second;
}

std::string KeyValueFile::get_string(const std::string& key) const { return raw(key); }

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

double KeyValueFile::get_double(const std::string& key) const {
  return parse_number(raw(key), key);
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long KeyValueFile::get_int(const std::string& key, long fallback) const {
  if (!has(key)) return fallback;
  const double value = get_double(key);
  if (value != static_cast<double>(static_cast<long>(value))) {
    fail(ErrorKind::Config, key + ": expected an integer");
  }
  return static_cast<long>(value);
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Config, key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> KeyValueFile::get_list(const std::string& key) const {
  std::string text = raw(key);
  for (char& c : text) {
    if (c == ',' || c == '[' || c == ']' || c == '(' || c == ')') c = ' ';
  }
  std::istringstream in(text);
  std::vector<double> values;
  std::string token;
  while (in >> token) values.push_back(parse_number(token, key));
  return values;
}

std::vector<double> KeyValueFile::get_list(const std::string& key, std::size_t expected) const {
  auto values = get_list(key);
  if (values.size() != expected) {
    fail(ErrorKind::Config, key + ": expected " + std::to_string(expected) + " values, got " +
                                std::to_string(values.size()));
  }
  return values;
}

std::vector<std::string> KeyValueFile::keys_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [key, value] : entries_) {
    if (key.compare(0, prefix.size(), prefix) == 0) out.push_back(key.substr(prefix.size()));
  }
  return out;
}

void KeyValueFile::check_all_consumed() const {
  for (const auto& [key, value] : entries_) {
    if (consumed_.count(key) == 0) fail(ErrorKind::Config, key + ": unknown key in " + origin_);
  }
}

void KeyValueFile::set(const std::string& key, const std::string& value) { entries_[key] = value; }

std::string format_double(double value) {
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc()) return "nan";
  return std::string(buffer, ptr);
}

}  // namespace rfa
