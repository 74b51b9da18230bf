#include "lookalike/tensor_io.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "lookalike/errors.h"

namespace lookalike {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

const ag::Mat* TensorContainer::find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return &m;
    return nullptr;
}

const ag::Mat& TensorContainer::at(const std::string& name) const {
    const ag::Mat* m = find(name);
    if (!m) fail(ErrorKind::Schema, "tensor '" + name + "' missing from container");
    return *m;
}

void write_container(const std::filesystem::path& path, const std::string& magic, const TensorContainer& container) {
    nlohmann::json header = container.meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, m] : container.tensors)
        header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + tmp);
        out << magic << '\n';
        const uint64_t length = text.size();
        out.write(reinterpret_cast<const char*>(&length), sizeof(length));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, m] : container.tensors)
            out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        out.flush();
        if (!out) fail(ErrorKind::Io, "write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::Io, "cannot move " + tmp + " into place: " + ec.message());
}

TensorContainer read_container(const std::filesystem::path& path, const std::string& magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
    std::string first;
    std::getline(in, first);
    if (first != magic) fail(ErrorKind::Schema, path.string() + ": expected '" + magic + "' container");
    uint64_t length = 0;
    in.read(reinterpret_cast<char*>(&length), sizeof(length));
    if (!in || length > (1ull << 30)) fail(ErrorKind::Schema, path.string() + ": bad header length");
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (!in) fail(ErrorKind::Schema, path.string() + ": truncated header");

    TensorContainer container;
    try {
        container.meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, path.string() + ": malformed header: " + e.what());
    }
    if (!container.meta.contains("tensors") || !container.meta["tensors"].is_array())
        fail(ErrorKind::Schema, path.string() + ": header lacks tensor table");
    for (const auto& entry : container.meta["tensors"]) {
        const auto rows = entry.at("rows").get<Eigen::Index>();
        const auto cols = entry.at("cols").get<Eigen::Index>();
        ag::Mat m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) fail(ErrorKind::Schema, path.string() + ": truncated tensor " + entry.at("name").get<std::string>());
        container.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(m));
    }
    container.meta.erase("tensors");
    return container;
}

uint64_t checksum(const std::vector<ag::Mat>& tensors) {
    // FNV-1a over the raw bytes.
    uint64_t hash = 1469598103934665603ull;
    for (const auto& m : tensors) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
        for (size_t i = 0; i < static_cast<size_t>(m.size()) * sizeof(double); ++i) {
            hash ^= bytes[i];
            hash *= 1099511628211ull;
        }
    }
    return hash;
}

}  // namespace lookalike
