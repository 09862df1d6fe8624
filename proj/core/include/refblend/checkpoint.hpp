#pragma once

#include <string>

#include "refblend/unet.hpp"

namespace refblend {

// Versioned binary model container ("RBLENDCK" magic, config echo, named
// little-endian f64 parameter payloads). Layout documented in docs/formats.md.
void save_checkpoint(const UNetModel& model, const std::string& path);
UNetModel load_checkpoint(const std::string& path);

} // namespace refblend
