#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lookalike/autograd.h"

namespace lookalike {

// Binary container: "<magic>\n", u64 LE header length, JSON header, then float64 LE payloads
// in header order. The header lists {"name","rows","cols"} per tensor under "tensors".
struct TensorContainer {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, ag::Mat>> tensors;

    const ag::Mat* find(const std::string& name) const;
    const ag::Mat& at(const std::string& name) const;  // throws Schema when absent
};

// Writes to a temporary file in the same directory and renames it into place.
void write_container(const std::filesystem::path& path, const std::string& magic, const TensorContainer& container);
TensorContainer read_container(const std::filesystem::path& path, const std::string& magic);

uint64_t checksum(const std::vector<ag::Mat>& tensors);

}  // namespace lookalike
