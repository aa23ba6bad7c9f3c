#pragma once

#include <cstdint>

// Counting replacement of the global allocation functions, shipped as the
// geofence_alloc_probe object library. Declared here for binaries that link it.
namespace geofence::alloc_probe {

/// Allocations made by the calling thread since it started.
std::uint64_t thread_allocations();

}  // namespace geofence::alloc_probe
