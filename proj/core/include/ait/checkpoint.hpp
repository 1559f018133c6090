#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ait/tensor.hpp"

namespace ait {

inline constexpr std::array<char, 8> kCheckpointMagic = {'A', 'I', 'T', 'C', 'K', 'P', 'T', '1'};

enum class EntryType : std::uint8_t {
    f32 = 0,
    bytes = 1,  // raw u8 payload (config text, counters)
};

/// One named array of an AITCKPT1 archive. `payload` holds the raw
/// little-endian values.
struct ArchiveEntry {
    std::string name;
    EntryType type = EntryType::f32;
    std::vector<std::uint32_t> extents;
    std::vector<std::uint8_t> payload;
};

/// Ordered entry list; names are unique.
class Archive {
   public:
    void add_tensor(std::string name, const Tensor& t);
    void add_bytes(std::string name, std::span<const std::uint8_t> bytes);
    void add_text(std::string name, std::string_view text);
    void add_u64(std::string name, std::uint64_t value);

    bool contains(std::string_view name) const;
    const ArchiveEntry& at(std::string_view name) const;
    Tensor tensor(std::string_view name) const;
    /// Copies an f32 entry into an existing tensor of the same shape.
    void load_into(std::string_view name, Tensor& target) const;
    std::string text(std::string_view name) const;
    std::uint64_t u64(std::string_view name) const;

    const std::vector<ArchiveEntry>& entries() const { return entries_; }
    void add(ArchiveEntry entry);

   private:
    std::vector<ArchiveEntry> entries_;
};

std::vector<std::uint8_t> encode_archive(const Archive& archive);
Archive decode_archive(std::span<const std::uint8_t> bytes);

/// Writes through a temporary file and renames it into place.
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

}  // namespace ait
