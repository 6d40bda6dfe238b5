#pragma once

namespace lgdml {

/// Entry point of the `lgdml` tool. Returns 0 on success, 1 when a check fails
/// and 2 on bad arguments or unusable inputs.
int cli_main(int argc, const char* const* argv);

}  // namespace lgdml
