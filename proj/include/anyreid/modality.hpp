#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace anyreid {

// Configured modality set, in its fixed order: RGB, near-infrared, thermal-infrared.
enum class Modality : std::uint8_t { R = 0, N = 1, T = 2 };

inline constexpr std::size_t kNumModalities = 3;
inline constexpr std::size_t kNumSlots = 2 * kNumModalities;
inline constexpr std::array<Modality, kNumModalities> kAllModalities = {Modality::R, Modality::N,
                                                                       Modality::T};

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }
constexpr std::size_t specific_slot(Modality m) { return index_of(m); }
constexpr std::size_t shared_slot(Modality m) { return kNumModalities + index_of(m); }

char modality_letter(Modality m);
std::optional<Modality> modality_from_letter(char c);

// Small bitset over the modalities. Iteration is always in modality order.
class ModalitySet {
 public:
  constexpr ModalitySet() = default;
  ModalitySet(std::initializer_list<Modality> ms) {
    for (Modality m : ms) insert(m);
  }

  static constexpr ModalitySet all() { return ModalitySet(std::uint8_t{0b111}); }

  // Parses letters such as "RT" or "RNT". Letters must be distinct; order is free.
  static std::optional<ModalitySet> parse(std::string_view letters);

  constexpr bool contains(Modality m) const { return (bits_ >> index_of(m)) & 1U; }
  void insert(Modality m) { bits_ |= static_cast<std::uint8_t>(1U << index_of(m)); }
  void erase(Modality m) { bits_ &= static_cast<std::uint8_t>(~(1U << index_of(m))); }
  constexpr bool empty() const { return bits_ == 0; }
  std::size_t size() const;
  std::vector<Modality> members() const;

  // Canonical name in modality order, e.g. "RNT".
  std::string to_string() const;

  constexpr std::uint8_t bits() const { return bits_; }
  friend constexpr bool operator==(ModalitySet a, ModalitySet b) { return a.bits_ == b.bits_; }

 private:
  constexpr explicit ModalitySet(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

}  // namespace anyreid
