// SPDX-License-Identifier: Apache-2.0

#include "mgpt/io.hpp"

#include "mgpt/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unistd.h>

namespace mgpt::io {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kMagicBytes = 8;

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view in, std::size_t& at, const std::string& origin) {
    if (at + sizeof(T) > in.size()) throw DataError("truncated container: " + origin);
    T v;
    std::memcpy(&v, in.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    if (f.bad()) throw IoError("read failed: " + path.string());
    return os.str();
}

const Matrix& Container::array(std::string_view name) const {
    for (const auto& [n, m] : arrays) {
        if (n == name) return m;
    }
    throw DataError("container " + magic + " has no array '" + std::string(name) + "'");
}

bool Container::has(std::string_view name) const {
    for (const auto& [n, m] : arrays) {
        if (n == name) return true;
    }
    return false;
}

std::string serialize_container(const Container& c) {
    if (c.magic.empty() || c.magic.size() > kMagicBytes) throw DomainError("container magic must be 1..8 bytes");
    nlohmann::json header;
    header["meta"] = c.meta;
    header["arrays"] = nlohmann::json::array();
    for (const auto& [name, m] : c.arrays) {
        header["arrays"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    }
    const std::string hdr = header.dump();
    std::string out;
    out.append(c.magic);
    out.append(kMagicBytes - c.magic.size(), '\0');
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, hdr.size());
    out.append(hdr);
    for (const auto& [name, m] : c.arrays) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index col = 0; col < m.cols(); ++col) put<double>(out, m(r, col));
        }
    }
    return out;
}

Container parse_container(std::string_view bytes, std::string_view expected_magic, const std::string& origin) {
    if (bytes.size() < kMagicBytes) throw DataError("not a checkpoint (too short): " + origin);
    std::string magic(bytes.substr(0, kMagicBytes));
    magic.erase(magic.find_last_not_of('\0') + 1);
    if (magic != expected_magic) {
        throw DataError("bad magic in " + origin + ": expected " + std::string(expected_magic) + ", found '" + magic + "'");
    }
    std::size_t at = kMagicBytes;
    const auto version = get<std::uint32_t>(bytes, at, origin);
    if (version != kFormatVersion) throw DataError("unsupported container version in " + origin);
    const auto hlen = get<std::uint64_t>(bytes, at, origin);
    if (at + hlen > bytes.size()) throw DataError("truncated container header: " + origin);
    Container c;
    c.magic = magic;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(at, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt container header in " + origin + ": " + e.what());
    }
    at += hlen;
    c.meta = header.at("meta");
    for (const auto& a : header.at("arrays")) {
        const auto rows = a.at("rows").get<Eigen::Index>();
        const auto cols = a.at("cols").get<Eigen::Index>();
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index col = 0; col < cols; ++col) m(r, col) = get<double>(bytes, at, origin);
        }
        c.add(a.at("name").get<std::string>(), std::move(m));
    }
    if (at != bytes.size()) throw DataError("trailing bytes in container: " + origin);
    return c;
}

void save_container(const fs::path& path, const Container& c) { write_file_atomic(path, serialize_container(c)); }

Container load_container(const fs::path& path, std::string_view expected_magic) {
    return parse_container(read_file(path), expected_magic, path.string());
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string_view version() { return MGPT_VERSION; }

}  // namespace mgpt::io
