#include "patchpad/checkpoint.hpp"

#include "patchpad/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace patchpad {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'C', 'K', 'P', 'T', '0', '1'};

template <class T>
void put_le(std::string& buf, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    template <class T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += sizeof(T);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    void need(std::size_t n) {
        if (buf.size() - pos < n) throw Error(ErrorKind::format, "truncated checkpoint " + path);
    }
};

}  // namespace

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

const ad::Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw Error(ErrorKind::not_found, "checkpoint has no tensor '" + name + "'");
}

void Checkpoint::restore(ad::Parameter& p) const {
    const ad::Tensor& t = tensor(p.name);
    if (!t.same_shape(p.value)) {
        throw Error(ErrorKind::format, "checkpoint tensor '" + p.name + "' has shape " + t.shape_str() + ", expected " +
                                           p.value.shape_str());
    }
    p.value = t;
    p.grad = ad::Tensor::zeros_like(t);
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw Error(ErrorKind::not_found, "checkpoint has no metadata key '" + key + "'");
    return it->second;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::string buf(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(k.size()));
        buf += k;
        put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(v.size()));
        buf += v;
    }
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
        buf += name;
        put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint64_t>(buf, d);
        for (double v : t.data()) put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof kMagic || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
        throw Error(ErrorKind::format, "not a checkpoint (bad magic): " + path.string());
    }
    const std::string p = path.string();
    Cursor c{buf, sizeof kMagic, p};
    Checkpoint ckpt;
    const auto n_meta = c.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = c.bytes(c.get<std::uint16_t>());
        ckpt.meta[k] = c.bytes(c.get<std::uint32_t>());
    }
    const auto n_tensors = c.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = c.bytes(c.get<std::uint16_t>());
        const auto rank = c.get<std::uint8_t>();
        if (rank < 1 || rank > 3) throw Error(ErrorKind::format, "bad tensor rank in " + p);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = c.get<std::uint64_t>();
        ad::Tensor t(shape);
        for (double& v : t.data()) v = std::bit_cast<double>(c.get<std::uint64_t>());
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (c.pos != buf.size()) throw Error(ErrorKind::format, "trailing bytes in checkpoint " + p);
    return ckpt;
}

}  // namespace patchpad
