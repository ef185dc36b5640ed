#pragma once

#include <cstdint>

namespace sfm::alloc {

// True when the library was built with the global operator new replacement.
bool tracking_enabled() noexcept;
// Heap allocations performed by the process so far (0 when not tracking).
std::uint64_t allocations() noexcept;
std::uint64_t allocated_bytes() noexcept;

}  // namespace sfm::alloc
