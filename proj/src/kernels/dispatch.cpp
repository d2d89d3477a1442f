#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mgf/kernels.hpp"

namespace mgf::kernels {

namespace {

constexpr KernelTable kScalar{Isa::scalar, &scalar::gemm, &scalar::dot, &scalar::axpy};
#if defined(MGF_HAVE_AVX2)
constexpr KernelTable kAvx2{Isa::avx2, &avx2::gemm, &avx2::dot, &avx2::axpy};
#endif

const KernelTable* detect() {
  const char* env = std::getenv("MGF_SIMD");
  const std::string want = env ? env : "";
  if (want == "scalar") return &kScalar;
#if defined(MGF_HAVE_AVX2)
  if (avx2::supported()) return &kAvx2;
#endif
  return &kScalar;
}

const KernelTable*& current() {
  static const KernelTable* table = detect();
  return table;
}

}  // namespace

bool isa_available(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(MGF_HAVE_AVX2)
  return avx2::supported();
#else
  return false;
#endif
}

const KernelTable& table_for(Isa isa) {
  if (!isa_available(isa)) throw std::invalid_argument("kernels: " + std::string(isa_name(isa)) + " not available");
#if defined(MGF_HAVE_AVX2)
  if (isa == Isa::avx2) return kAvx2;
#endif
  return kScalar;
}

const KernelTable& active() { return *current(); }

void set_active(Isa isa) { current() = &table_for(isa); }

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace mgf::kernels
