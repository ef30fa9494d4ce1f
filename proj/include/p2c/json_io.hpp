#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

#include "p2c/tensor.hpp"

namespace p2c {

using json = nlohmann::json;

// Bad or incomplete user input: config files, task files, CLI values.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const json& j, std::string_view where);

// j[key] or a ValidationError naming `where.key`.
const json& require(const json& j, std::string_view key, std::string_view where);

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

// %.9g, the precision used in every CSV this project writes.
std::string fmt9(double v);

std::string sha256_hex(std::string_view bytes);

}  // namespace p2c
