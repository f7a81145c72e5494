#include <cstdlib>
#include <string>

#include "ragnet/error.hpp"
#include "ragnet/kernels.hpp"

namespace ragnet::kernels {

namespace {

Isa detect() {
    if (const char* env = std::getenv("RAGNET_ISA")) {
        const std::string v = env;
        if (v == "scalar") return Isa::Scalar;
        if (v == "avx2" && cpu_supports(Isa::Avx2)) return Isa::Avx2;
    }
    return cpu_supports(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

Isa& current() {
    static Isa isa = detect();
    return isa;
}

}  // namespace

std::string_view to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool cpu_supports(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return true;
        case Isa::Avx2:
#if defined(__x86_64__) || defined(__i386__)
            return detail::avx2_table<float>() != nullptr && __builtin_cpu_supports("avx2") &&
                   __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

template <typename T>
const KernelTable<T>* table_for(Isa isa) {
    if (!cpu_supports(isa)) return nullptr;
    return isa == Isa::Avx2 ? detail::avx2_table<T>() : &detail::scalar_table<T>();
}

template <typename T>
const KernelTable<T>& active() {
    return *table_for<T>(current());
}

Isa active_isa() { return current(); }

void set_active_isa(Isa isa) {
    if (!cpu_supports(isa)) throw ArgumentError("kernel ISA " + std::string(to_string(isa)) + " not supported on this CPU");
    current() = isa;
}

template const KernelTable<float>* table_for<float>(Isa);
template const KernelTable<double>* table_for<double>(Isa);
template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace ragnet::kernels
