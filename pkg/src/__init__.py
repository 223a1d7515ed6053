"""Source code for the application.""" 