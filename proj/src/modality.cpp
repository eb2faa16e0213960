#include "anyreid/modality.hpp"

#include <bit>

namespace anyreid {

char modality_letter(Modality m) {
  switch (m) {
    case Modality::R:
      return 'R';
    case Modality::N:
      return 'N';
    case Modality::T:
      return 'T';
  }
  return '?';
}

std::optional<Modality> modality_from_letter(char c) {
  switch (c) {
    case 'R':
      return Modality::R;
    case 'N':
      return Modality::N;
    case 'T':
      return Modality::T;
    default:
      return std::nullopt;
  }
}

std::optional<ModalitySet> ModalitySet::parse(std::string_view letters) {
  ModalitySet set;
  for (char c : letters) {
    auto m = modality_from_letter(c);
    if (!m || set.contains(*m)) return std::nullopt;
    set.insert(*m);
  }
  return set;
}

std::size_t ModalitySet::size() const { return static_cast<std::size_t>(std::popcount(bits_)); }

std::vector<Modality> ModalitySet::members() const {
  std::vector<Modality> out;
  for (Modality m : kAllModalities)
    if (contains(m)) out.push_back(m);
  return out;
}

std::string ModalitySet::to_string() const {
  std::string s;
  for (Modality m : members()) s.push_back(modality_letter(m));
  return s;
}

}  // namespace anyreid
