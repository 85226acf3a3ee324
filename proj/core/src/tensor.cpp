#include "attnseg/tensor.hpp"

#include <cmath>

namespace attnseg {

std::string Shape::str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& context) {
    const char* axis = a.n != b.n   ? "n"
                       : a.c != b.c ? "c"
                       : a.h != b.h ? "h"
                       : a.w != b.w ? "w"
                                    : nullptr;
    if (axis != nullptr)
        throw DimensionError(axis, context + ": shape " + a.str() + " does not match " + b.str() +
                                       " on axis " + axis);
}

template <class T>
bool all_finite(const Tensor4<T>& t) {
    return std::all_of(t.vec().begin(), t.vec().end(), [](T v) { return std::isfinite(v); });
}

template bool all_finite<float>(const Tensor4<float>&);
template bool all_finite<double>(const Tensor4<double>&);

}  // namespace attnseg
