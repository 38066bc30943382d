class SSIDFilter { EditText ssidText; void onTextChanged(String text) { if (text.isEmpty()) return; ssidText.setEnabled(false); } }
