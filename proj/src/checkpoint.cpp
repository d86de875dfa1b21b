#include "mga/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <vector>

#include "mga/error.hpp"

namespace mga {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("checkpoint truncated while reading a u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("checkpoint truncated while reading a value");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::string shape_text(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

void save_checkpoint(const std::string& path, Network& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    auto entries = net.state_entries();
    put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) put_u32(os, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < e.count; ++i) put_f64(os, e.values[i]);
    }
    if (!os) throw IoError("failed while writing " + path);
}

void load_checkpoint(const std::string& path, Network& net) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path + " for reading");
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
        throw FormatError(path + " is not a checkpoint (bad magic)");
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = get_u32(is);

    struct Stored {
        std::vector<int> shape;
        std::vector<double> values;
    };
    std::map<std::string, Stored> stored;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        if (name_len && !is.read(name.data(), name_len))
            throw FormatError("checkpoint truncated while reading an entry name");
        const std::uint32_t rank = get_u32(is);
        Stored s;
        std::size_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = static_cast<int>(get_u32(is));
            s.shape.push_back(d);
            numel *= static_cast<std::size_t>(d);
        }
        s.values.resize(numel);
        for (auto& v : s.values) v = get_f64(is);
        if (!stored.emplace(std::move(name), std::move(s)).second)
            throw FormatError("checkpoint has a duplicate entry");
    }

    auto entries = net.state_entries();
    for (auto& e : entries) {
        auto it = stored.find(e.name);
        if (it == stored.end())
            throw FormatError("checkpoint is missing entry " + e.name);
        if (it->second.shape != e.shape)
            throw FormatError("checkpoint entry " + e.name + " has shape " +
                              shape_text(it->second.shape) + ", expected " +
                              shape_text(e.shape));
    }
    if (stored.size() != entries.size()) {
        for (const auto& [name, s] : stored) {
            bool known = false;
            for (const auto& e : entries) known = known || e.name == name;
            if (!known) throw FormatError("checkpoint has an unknown entry " + name);
        }
    }
    for (auto& e : entries) {
        const auto& src = stored.at(e.name).values;
        std::copy(src.begin(), src.end(), e.values);
    }
}

}  // namespace mga
