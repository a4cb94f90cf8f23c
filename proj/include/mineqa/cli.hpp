#pragma once

namespace mineqa {

// Entry point behind the mineqa binary. Exit status: 0 success, 1 user or
// configuration error, 2 runtime failure after the run started.
int cli_dispatch(int argc, char** argv);

}  // namespace mineqa
