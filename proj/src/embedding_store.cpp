#include "patchpad/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fs = std::filesystem;

namespace patchpad {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'M', 'B', 'E', 'D', '1'};

template <class T>
void put_le(std::string& buf, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

    template <class T>
    T get_le(const char* what) {
        need(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return v;
    }
    std::string get_bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n) {
            throw StoreError(StoreErrorKind::truncated, std::string("embedding store truncated while reading ") + what);
        }
    }
    std::string buf_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string make_patch_id(std::string_view doc_id, std::string_view export_name) {
    std::string id(doc_id);
    id.push_back('/');
    id.append(export_name);
    return id;
}

std::string_view doc_of(std::string_view patch_id) {
    const auto slash = patch_id.rfind('/');
    return slash == std::string_view::npos ? std::string_view{} : patch_id.substr(0, slash);
}

std::string_view base_patch_id(std::string_view patch_id) {
    const auto hash = patch_id.find('#');
    return hash == std::string_view::npos ? patch_id : patch_id.substr(0, hash);
}

EmbeddingStore::EmbeddingStore(std::uint32_t dim) : dim_(dim) {
    if (dim == 0) throw StoreError(StoreErrorKind::dimension_mismatch, "embedding dimension must be positive");
}

void EmbeddingStore::add(std::string id, std::span<const float> values) {
    if (values.size() != dim_) {
        throw StoreError(StoreErrorKind::dimension_mismatch, "embedding '" + id + "' has " +
                                                                 std::to_string(values.size()) + " entries, store dim is " +
                                                                 std::to_string(dim_));
    }
    if (id.size() > 0xffff) throw invalid_argument("patch id longer than 65535 bytes");
    for (float v : values) {
        if (!std::isfinite(v)) throw StoreError(StoreErrorKind::non_finite, "embedding '" + id + "' has a non-finite entry");
    }
    if (index_.count(id)) throw StoreError(StoreErrorKind::duplicate_id, "duplicate patch id '" + id + "'");
    const std::size_t idx = ids_.size();
    index_.emplace(id, idx);
    by_doc_[std::string(doc_of(id))].push_back(idx);
    data_.insert(data_.end(), values.begin(), values.end());
    ids_.push_back(std::move(id));
}

bool EmbeddingStore::contains(std::string_view id) const { return index_.count(std::string(id)) != 0; }

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::span<const float> EmbeddingStore::at(std::string_view id) const {
    auto idx = find(id);
    if (!idx) throw Error(ErrorKind::not_found, "unknown patch id '" + std::string(id) + "'");
    return values(*idx);
}

std::vector<std::size_t> EmbeddingStore::indices_of_doc(std::string_view doc_id) const {
    auto it = by_doc_.find(std::string(doc_id));
    return it == by_doc_.end() ? std::vector<std::size_t>{} : it->second;
}

bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    if (a.dim_ != b.dim_ || a.ids_ != b.ids_) return false;
    // Bitwise comparison so that NaN payloads or signed zeros would not hide.
    return a.data_.size() == b.data_.size() &&
           std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

void save_store(const EmbeddingStore& store, const fs::path& path) {
    std::string buf(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(buf, store.dim());
    put_le<std::uint64_t>(buf, store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const std::string& id = store.id(i);
        put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(id.size()));
        buf += id;
        for (float v : store.values(i)) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write embedding store " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("write failed: " + path.string());
}

EmbeddingStore load_store(const fs::path& path, std::optional<std::uint32_t> expected_dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open embedding store " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw StoreError(StoreErrorKind::bad_magic, "not an embedding store (bad magic): " + path.string());
    }
    Reader r(bytes.substr(sizeof kMagic));
    const auto dim = r.get_le<std::uint32_t>("dimension");
    if (dim == 0 || (expected_dim && dim != *expected_dim)) {
        throw StoreError(StoreErrorKind::dimension_mismatch,
                         "embedding store dimension " + std::to_string(dim) +
                             (expected_dim ? " does not match expected " + std::to_string(*expected_dim) : ""));
    }
    const auto count = r.get_le<std::uint64_t>("record count");
    EmbeddingStore store(dim);
    std::vector<float> values(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = r.get_le<std::uint16_t>("id length");
        std::string id = r.get_bytes(len, "id");
        for (auto& v : values) v = std::bit_cast<float>(r.get_le<std::uint32_t>("values"));
        if (store.contains(id)) throw StoreError(StoreErrorKind::duplicate_id, "duplicate patch id '" + id + "' in " + path.string());
        store.add(std::move(id), values);
    }
    if (r.remaining() != 0) {
        throw StoreError(StoreErrorKind::trailing_bytes, std::to_string(r.remaining()) + " unexpected bytes after last record");
    }
    return store;
}

std::vector<std::span<const float>> batch_lookup(const EmbeddingStore& store, std::span<const std::string> ids) {
    std::vector<std::span<const float>> out;
    out.reserve(ids.size());
    std::string missing;
    std::size_t n_missing = 0;
    for (const auto& id : ids) {
        auto idx = store.find(id);
        if (!idx) {
            missing += (n_missing++ ? ", " : "") + id;
            continue;
        }
        out.push_back(store.values(*idx));
    }
    if (n_missing) throw Error(ErrorKind::not_found, std::to_string(n_missing) + " patch id(s) not in store: " + missing);
    return out;
}

}  // namespace patchpad
