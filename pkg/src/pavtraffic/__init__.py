"""Mean-field model of leader-dependent mode switching in partially automated traffic."""
