#include "treehop/jsonl.hpp"

#include <cmath>
#include <fstream>

#include "treehop/errors.hpp"

namespace treehop {

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::exception& e) {
      throw FormatError(path.string() + ": invalid JSON: " + e.what(), line_no);
    }
    if (!obj.is_object()) throw FormatError(path.string() + ": expected a JSON object", line_no);
    try {
      fn(obj, line_no);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": " + e.what(), line_no);
    }
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const Json& value) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << value.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what(), 0);
  }
}

std::vector<double> json_to_vector(const Json& array, const std::string& field) {
  if (!array.is_array()) throw DataError("field '" + field + "' must be an array of numbers");
  std::vector<double> out;
  out.reserve(array.size());
  for (const auto& x : array) {
    if (!x.is_number()) throw DataError("field '" + field + "' contains a non-number");
    double v = x.get<double>();
    if (!std::isfinite(v)) throw DataError("field '" + field + "' contains a non-finite value");
    out.push_back(v);
  }
  return out;
}

std::vector<float> json_to_embedding(const Json& array, const std::string& field) {
  auto v = json_to_vector(array, field);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(v[i]);
    if (!std::isfinite(out[i])) throw DataError("field '" + field + "' overflows f32");
  }
  return out;
}

Json embedding_to_json(const std::vector<float>& v) {
  Json arr = Json::array();
  for (float x : v) arr.push_back(x);
  return arr;
}

Json vector_to_json(const std::vector<double>& v) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

}  // namespace treehop
