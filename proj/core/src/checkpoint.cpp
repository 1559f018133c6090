#include "ait/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <system_error>

#include "ait/error.hpp"

namespace ait {

namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
   public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t pos() const { return pos_; }

   private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("checkpoint truncated reading " + std::string(what) + " at byte " + std::to_string(pos_) +
                              ": need " + std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                              " left");
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::size_t element_size(EntryType t) { return t == EntryType::f32 ? 4 : 1; }

}  // namespace

void Archive::add(ArchiveEntry entry) {
    if (entry.name.empty() || entry.name.size() > 0xffff) throw FormatError("archive entry names need 1..65535 bytes");
    if (contains(entry.name)) throw FormatError("duplicate archive entry '" + entry.name + "'");
    if (entry.extents.size() > 0xff) throw FormatError("archive entry '" + entry.name + "' has too many axes");
    std::size_t count = 1;
    for (auto e : entry.extents) count *= e;
    if (count * element_size(entry.type) != entry.payload.size()) {
        throw FormatError("archive entry '" + entry.name + "' payload does not match its extents");
    }
    entries_.push_back(std::move(entry));
}

void Archive::add_tensor(std::string name, const Tensor& t) {
    ArchiveEntry e;
    e.name = std::move(name);
    e.type = EntryType::f32;
    for (auto x : t.shape()) e.extents.push_back(static_cast<std::uint32_t>(x));
    e.payload.reserve(t.numel() * 4);
    for (auto v : t.data()) put(e.payload, static_cast<float>(v));
    add(std::move(e));
}

void Archive::add_bytes(std::string name, std::span<const std::uint8_t> bytes) {
    ArchiveEntry e;
    e.name = std::move(name);
    e.type = EntryType::bytes;
    e.extents = {static_cast<std::uint32_t>(bytes.size())};
    e.payload.assign(bytes.begin(), bytes.end());
    add(std::move(e));
}

void Archive::add_text(std::string name, std::string_view text) {
    add_bytes(std::move(name), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void Archive::add_u64(std::string name, std::uint64_t value) {
    std::vector<std::uint8_t> raw;
    put(raw, value);
    add_bytes(std::move(name), raw);
}

bool Archive::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const ArchiveEntry& e) { return e.name == name; });
}

const ArchiveEntry& Archive::at(std::string_view name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw FormatError("checkpoint has no entry '" + std::string(name) + "'");
}

Tensor Archive::tensor(std::string_view name) const {
    const auto& e = at(name);
    if (e.type != EntryType::f32) throw FormatError("entry '" + std::string(name) + "' is not a float array");
    Shape shape(e.extents.begin(), e.extents.end());
    std::vector<Scalar> values(e.payload.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        float f;
        std::memcpy(&f, e.payload.data() + 4 * i, 4);
        values[i] = static_cast<Scalar>(f);
    }
    if (shape.empty()) return Tensor::scalar(values.at(0));
    return Tensor(std::move(shape), std::move(values));
}

void Archive::load_into(std::string_view name, Tensor& target) const {
    Tensor src = tensor(name);
    if (src.shape() != target.shape()) {
        throw ShapeError("checkpoint entry '" + std::string(name) + "' is " + shape_str(src.shape()) + ", expected " +
                         shape_str(target.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), target.data().begin());
}

std::string Archive::text(std::string_view name) const {
    const auto& e = at(name);
    if (e.type != EntryType::bytes) throw FormatError("entry '" + std::string(name) + "' is not a byte array");
    return std::string(e.payload.begin(), e.payload.end());
}

std::uint64_t Archive::u64(std::string_view name) const {
    const auto& e = at(name);
    if (e.type != EntryType::bytes || e.payload.size() != 8) {
        throw FormatError("entry '" + std::string(name) + "' is not a 64-bit counter");
    }
    std::uint64_t v;
    std::memcpy(&v, e.payload.data(), 8);
    return v;
}

std::vector<std::uint8_t> encode_archive(const Archive& archive) {
    std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    put(out, static_cast<std::uint32_t>(archive.entries().size()));
    for (const auto& e : archive.entries()) {
        put(out, static_cast<std::uint16_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put(out, static_cast<std::uint8_t>(e.type));
        put(out, static_cast<std::uint8_t>(e.extents.size()));
        for (auto x : e.extents) put(out, x);
        out.insert(out.end(), e.payload.begin(), e.payload.end());
    }
    return out;
}

Archive decode_archive(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(kCheckpointMagic.size(), "magic");
    if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) throw FormatError("not an AITCKPT1 checkpoint");
    const auto count = r.get<std::uint32_t>("entry count");
    Archive archive;
    for (std::uint32_t i = 0; i < count; ++i) {
        ArchiveEntry e;
        const auto len = r.get<std::uint16_t>("name length");
        auto name = r.take(len, "entry name");
        e.name.assign(name.begin(), name.end());
        const auto type = r.get<std::uint8_t>("dtype");
        if (type > 1) throw FormatError("entry '" + e.name + "' has unknown dtype " + std::to_string(type));
        e.type = static_cast<EntryType>(type);
        const auto rank = r.get<std::uint8_t>("rank");
        std::size_t n = 1;
        for (std::uint8_t a = 0; a < rank; ++a) {
            e.extents.push_back(r.get<std::uint32_t>("extent"));
            n *= e.extents.back();
        }
        auto payload = r.take(n * element_size(e.type), "entry data");
        e.payload.assign(payload.begin(), payload.end());
        archive.add(std::move(e));
    }
    if (!r.done()) throw FormatError("checkpoint has " + std::to_string(bytes.size() - r.pos()) + " trailing bytes");
    return archive;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("short write to " + tmp.string() + " (disk full?)");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void save_archive(const std::filesystem::path& path, const Archive& archive) { write_bytes(path, encode_archive(archive)); }

Archive load_archive(const std::filesystem::path& path) { return decode_archive(read_bytes(path)); }

}  // namespace ait
