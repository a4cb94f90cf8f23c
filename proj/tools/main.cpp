#include "mineqa/cli.hpp"

int main(int argc, char** argv) { return mineqa::cli_dispatch(argc, argv); }
