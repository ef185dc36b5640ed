#pragma once

#include <ostream>
#include <string>

#include <json.hpp>

#include "sfm/cli/commands.hpp"

namespace sfm::cli {

// Flat key/value report with optional tables. Text form is one "key: value"
// line per field and one "table[i]: k=v ..." line per row.
class Report {
 public:
  using Json = nlohmann::ordered_json;

  explicit Report(const std::string& command) { j_["command"] = command; }

  template <class V>
  void set(const std::string& key, V&& value) {
    j_[key] = std::forward<V>(value);
  }
  void add_row(const std::string& table, Json row) { j_[table].push_back(std::move(row)); }
  const Json& json() const noexcept { return j_; }

  void emit(const OutputOptions& opt, std::ostream& out) const;

 private:
  Json j_;
};

}  // namespace sfm::cli
