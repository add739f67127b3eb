#include "meshreg/random.hpp"

namespace meshreg {

std::uint64_t mix64(std::uint64_t z) noexcept {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Seed derive_seed(Seed parent, std::uint64_t stream, std::uint64_t index) noexcept {
    std::uint64_t h = mix64(parent.value + 0x9e3779b97f4a7c15ULL);
    h = mix64(h ^ (stream * 0xd1b54a32d192ed03ULL));
    h = mix64(h ^ (index + 0x8cb92ba72f3d8dd7ULL));
    return Seed{h};
}

}  // namespace meshreg
