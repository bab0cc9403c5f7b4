#pragma once

namespace deformsplat {

/// Entry point of the `deformsplat` tool. Returns the process exit code:
/// 0 on success, 1 on runtime errors, 2 on usage errors.
int run_cli(int argc, char** argv);

} // namespace deformsplat
