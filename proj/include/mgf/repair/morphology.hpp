#pragma once

#include "mgf/image.hpp"

namespace mgf::repair {

enum class MorphOp { dilate, erode, close, open, thin };

/// Binary morphology with the full 3x3 structuring element. Pixels outside the image count
/// as background for dilation and as foreground for erosion, so closing is extensive.
BinaryMask morph(const BinaryMask& mask, MorphOp op);

BinaryMask dilate(const BinaryMask& mask);
BinaryMask erode(const BinaryMask& mask);

/// Peels simple, non-end border pixels in N/S/E/W sub-iterations until stable, then clears any
/// remaining 2x2 blocks. Preserves 8-connectivity, holes and endpoints. When `deferred` is given,
/// unflagged pixels are peeled first, ends included, as long as topology allows.
BinaryMask thin(const BinaryMask& mask, const BinaryMask* deferred = nullptr);

/// True when removing (r, c) keeps the local 8-connectivity of foreground and 4-connectivity
/// of background.
bool is_simple(const BinaryMask& mask, std::size_t r, std::size_t c);

}  // namespace mgf::repair
