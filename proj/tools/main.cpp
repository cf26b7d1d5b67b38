#include "dlab/cli.hpp"

int main(int argc, char** argv) { return dlab::dispatch(argc, argv); }
