#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace treehop {

using Json = nlohmann::json;

// Calls fn(object, line_number) for every non-blank line. Malformed JSON
// raises FormatError with the line number; exceptions thrown by fn that are
// not treehop errors are rewrapped the same way.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn);

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);
void write_json(const std::filesystem::path& path, const Json& value);
Json read_json(const std::filesystem::path& path);

// Numeric array -> vector, rejecting non-numbers and non-finite values.
std::vector<double> json_to_vector(const Json& array, const std::string& field);
std::vector<float> json_to_embedding(const Json& array, const std::string& field);

// Shortest round-trip encoding for floats so JSON embeddings survive exactly.
Json embedding_to_json(const std::vector<float>& v);
Json vector_to_json(const std::vector<double>& v);

}  // namespace treehop
